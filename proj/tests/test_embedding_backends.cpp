// Copyright 2026 The Impersona Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <atomic>
#include <filesystem>
#include <thread>

#include <gtest/gtest.h>

#include "impersona/embedding_backends.hpp"

namespace impersona::vision {
namespace {

// Returns [len(text), 1, index] for each input, in reverse order with
// explicit indices.
class FakeEmbeddings {
 public:
  FakeEmbeddings() {
    server_.Post("/v1/embeddings", [this](const httplib::Request& req, httplib::Response& res) {
      ++requests_;
      const auto body = nlohmann::json::parse(req.body);
      model_ = body.at("model").get<std::string>();
      const auto& input = body.at("input");
      nlohmann::json data = nlohmann::json::array();
      for (std::size_t i = input.size(); i-- > 0;)
        data.push_back({{"index", i},
                        {"embedding", {input[i].get<std::string>().size(), 1.0, static_cast<double>(i)}}});
      res.set_content(nlohmann::json{{"data", data}}.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeEmbeddings() {
    server_.stop();
    thread_.join();
  }

  HttpBackendConfig config() const {
    HttpBackendConfig cfg;
    cfg.base_url = "http://127.0.0.1:" + std::to_string(port_) + "/v1";
    cfg.model = "clip-test";
    cfg.initial_backoff = std::chrono::milliseconds(1);
    cfg.timeout = std::chrono::seconds(5);
    return cfg;
  }

  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::atomic<int> requests_{0};
  std::string model_;
};

const std::vector<EmbeddingRequest> kRequests = {{"d/a/p/0", "It is red."}, {"d/b/p/0", "It is a tall bird."}};

TEST(HttpEmbeddingProvider, OrdersByIndex) {
  FakeEmbeddings server;
  HttpEmbeddingProvider provider(server.config());
  const auto out = provider.embed(kRequests);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].values, (std::vector<double>{10, 1, 0}));
  EXPECT_EQ(out[1].values, (std::vector<double>{18, 1, 1}));
  EXPECT_EQ(server.model_, "clip-test");
}

TEST(HttpEmbeddingProvider, BatchesThroughEmbedDescriptions) {
  FakeEmbeddings server;
  HttpEmbeddingProvider provider(server.config());
  std::vector<ClassDescription> ds(130);
  for (int i = 0; i < 130; ++i) {
    ds[i].dataset_id = "d";
    ds[i].class_id = "c" + std::to_string(i);
    ds[i].cleaned_text = std::string(static_cast<std::size_t>(i + 1), 'x');
  }
  const auto out = embed_descriptions(ds, provider);
  EXPECT_EQ(server.requests_, 3);
  EXPECT_EQ(out.size(), 130u);
}

TEST(CachingEmbeddingProvider, RecordThenStrictReplay) {
  const auto path = std::filesystem::temp_directory_path() / "impersona_embed_cache.jsonl";
  std::filesystem::remove(path);
  FakeEmbeddings server;
  std::vector<EmbeddingVector> recorded;
  {
    auto cache = std::make_shared<ReplayCache>(path);
    CachingEmbeddingProvider rec(std::make_unique<HttpEmbeddingProvider>(server.config()), cache,
                                 BackendMode::record);
    recorded = rec.embed(kRequests);
  }
  EXPECT_EQ(server.requests_, 1);
  auto cache = std::make_shared<ReplayCache>(path, false);
  CachingEmbeddingProvider replay(std::make_unique<HttpEmbeddingProvider>(server.config()), cache,
                                  BackendMode::replay_strict);
  EXPECT_EQ(replay.embed(kRequests), recorded);
  EXPECT_EQ(server.requests_, 1);
  const std::vector<EmbeddingRequest> unseen = {{"d/c/p/0", "new text"}};
  EXPECT_THROW(replay.embed(unseen), FixtureError);
}

}  // namespace
}  // namespace impersona::vision
