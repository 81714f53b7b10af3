// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

#include <chrono>

#include <doctest.h>

#include "babylab/error.hpp"
#include "babylab/protocol.hpp"
#include "babylab/scorers.hpp"
#include "babylab/tokenizer.hpp"
#include "oracles.hpp"

// After Eigen: <resolv.h> defines a _res macro that clashes with it.
#include <httplib.h>

using namespace babylab;
using namespace babylab::testing;

TEST_CASE("request shapes") {
  CHECK(protocol::nll_request("ciao") == nlohmann::json{{"op", "nll"}, {"text", "ciao"}});
  CHECK(protocol::complete_request("p", 3, 12) ==
        nlohmann::json{{"op", "complete"}, {"prompt", "p"}, {"beams", 3}, {"max_new", 12}});
  CHECK(protocol::fill_mask_request("a <mask>", 5) ==
        nlohmann::json{{"op", "fill_mask"}, {"text", "a <mask>"}, {"k", 5}});
}

TEST_CASE("responses parse or raise scorer errors") {
  const auto n = protocol::parse_nll_response({{"total_nll", 4.5}, {"tokens", 3}});
  CHECK(n.total == 4.5);
  CHECK(n.tokens == 3);
  CHECK_THROWS_AS(protocol::parse_nll_response({{"error", "boom"}}), ScorerError);
  CHECK_THROWS_AS(protocol::parse_nll_response({{"total_nll", "x"}}), ScorerError);
  CHECK_THROWS_AS(protocol::parse_nll_response({{"total_nll", 1.0}, {"tokens", 0}}), ScorerError);
  const auto g = protocol::parse_complete_response({{"text", "va"}, {"score", -1.0}});
  CHECK(g.text == "va");
  const auto c = protocol::parse_fill_mask_response(
      {{"candidates", {{{"token", "a"}, {"score", 0.5}}, {{"token", "b"}, {"score", 0.25}}}}});
  REQUIRE(c.size() == 2);
  CHECK(c[1].token == "b");
}

TEST_CASE("server side dispatch") {
  TableScorer s;
  s.perplexity["ciao"] = std::exp(1.0);
  s.tokens_per_text = 2;
  s.completion["La mamma"] = "canta";
  auto reply = protocol::handle_request(s, protocol::nll_request("ciao"));
  CHECK(reply.at("total_nll").get<double>() == doctest::Approx(2.0));
  CHECK(reply.at("tokens") == 2);
  reply = protocol::handle_request(s, protocol::complete_request("La mamma", 3, 4));
  CHECK(reply.at("text") == "canta");
  CHECK(protocol::handle_request(s, protocol::nll_request("ignoto")).contains("error"));
  CHECK(protocol::handle_request(s, {{"op", "dance"}}).contains("error"));
  // The table scorer has no fill_mask capability.
  CHECK(protocol::handle_request(s, protocol::fill_mask_request("a <mask>", 2)).contains("error"));
  CHECK(nlohmann::json::parse(protocol::handle_line(s, "not json")).contains("error"));
}

TEST_CASE("model scorer serves all three operations") {
  const std::vector<std::string> corpus{"La mamma canta.", "Le mamme cantano."};
  const auto tok = Tokenizer::train(corpus, Tokenizer::min_vocab_size() + 8);
  auto dcfg = small_config(ModelKind::Decoder, tok.vocab_size());
  dcfg.max_length = 32;
  const ModelScorer dec(tok, TransformerModel::build(dcfg, 1), "dec");
  CHECK(dec.capabilities().complete);
  CHECK_FALSE(dec.capabilities().fill_mask);
  const auto nll = dec.sequence_nll("La mamma canta.");
  CHECK(nll.tokens == tok.encode("La mamma canta.").size());
  CHECK(nll.total > 0.0);
  CHECK(dec.sequence_nll("La mamma canta.").total == nll.total);
  const auto gen = dec.complete("La mamma", 3, 4);
  CHECK(std::find(dec.stop_ids().begin(), dec.stop_ids().end(), kEosId) != dec.stop_ids().end());
  (void)gen;

  auto ecfg = small_config(ModelKind::Encoder, tok.vocab_size());
  ecfg.max_length = 32;
  const ModelScorer enc(tok, TransformerModel::build(ecfg, 1), "enc");
  CHECK(enc.capabilities().fill_mask);
  const auto cands = enc.fill_mask("La mamma <mask>", 3);
  CHECK(cands.size() == 3);
  CHECK_THROWS_AS(enc.fill_mask("nessuna maschera", 3), ScorerError);
}

#ifdef BABYLAB_RIGGED_SCORER

namespace {

std::string rigged(const std::string& flags = "") {
  return std::string("cmd:") + BABYLAB_RIGGED_SCORER + " --benchmark " + fixture("benchmark.jsonl").string() + " " +
         flags;
}

}  // namespace

TEST_CASE("external process scorer round trip") {
  const auto scorer = make_scorer(rigged("--wrong acc-01 --fail acc-02 --garble acc-03"));
  const auto items = load_benchmark(fixture("benchmark.jsonl"));
  const auto& p1 = std::get<MinimalPairPayload>(items[0].payload);
  CHECK(scorer->sequence_nll(p1.grammatical).total == 5.0);
  CHECK(scorer->sequence_nll(p1.ungrammatical).total == 1.0);
  const auto& p2 = std::get<MinimalPairPayload>(items[1].payload);
  CHECK_THROWS_AS(scorer->sequence_nll(p2.grammatical), ScorerError);
  const auto& p3 = std::get<MinimalPairPayload>(items[2].payload);
  CHECK_THROWS_AS(scorer->sequence_nll(p3.grammatical), ScorerError);
  // A malformed reply fails that request only.
  const auto& p4 = std::get<MinimalPairPayload>(items[3].payload);
  CHECK(scorer->sequence_nll(p4.grammatical).total == 1.0);
}

TEST_CASE("a scorer process that exits surfaces as an error") {
  const auto scorer = make_scorer("cmd:true");
  CHECK_THROWS_AS(scorer->sequence_nll("ciao"), ScorerError);
  CHECK_THROWS_AS(scorer->sequence_nll("ciao"), ScorerError);
}

TEST_CASE("a silent scorer process times out") {
  ProcessScorer scorer("sleep 5", std::chrono::milliseconds(200));
  CHECK_THROWS_AS(scorer.sequence_nll("ciao"), ScorerError);
}

#endif

TEST_CASE("http scorer speaks the same protocol") {
  TableScorer s;
  s.perplexity["ciao"] = std::exp(0.5);
  s.tokens_per_text = 4;
  httplib::Server server;
  server.Post("/score", [&](const httplib::Request& req, httplib::Response& res) {
    res.set_content(protocol::handle_line(s, req.body), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  {
    const auto scorer = make_scorer("http://127.0.0.1:" + std::to_string(port) + "/score");
    const auto nll = scorer->sequence_nll("ciao");
    CHECK(nll.total == doctest::Approx(2.0));
    CHECK(nll.tokens == 4);
    CHECK_THROWS_AS(scorer->sequence_nll("ignoto"), ScorerError);
  }
  server.stop();
  thread.join();
  const auto dead = make_scorer("http://127.0.0.1:" + std::to_string(port) + "/score");
  CHECK_THROWS_AS(dead->sequence_nll("ciao"), ScorerError);
}

TEST_CASE("scorer specs") {
  CHECK_THROWS_AS(make_scorer("ftp://x"), ConfigError);
  CHECK_THROWS_AS(make_scorer("ckpt:/definitely/missing.ckpt"), IoError);
}
