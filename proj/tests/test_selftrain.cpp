#include <gtest/gtest.h>

#include <algorithm>

#include "docmt/experiment.hpp"
#include "docmt/selftrain.hpp"
#include "fixtures.hpp"

using namespace docmt;

namespace {

const std::vector<Document>& docs() { return fixture::tiny().corpus.test.docs; }

AdaptConfig adapt(double alpha, int passes = 2) {
  AdaptConfig a;
  a.alpha = alpha;
  a.lambda = 0.01;
  a.steps = 3;
  a.passes = passes;
  return a;
}

std::string jsonl(const std::vector<DecodeResult>& rs) {
  std::string out;
  for (const auto& r : rs) out += result_to_json(r).dump() + "\n";
  return out;
}

std::vector<std::vector<std::string>> outputs(const std::vector<DecodeResult>& rs) {
  std::vector<std::vector<std::string>> out;
  for (const auto& r : rs) out.push_back(r.translations());
  return out;
}

}  // namespace

TEST(SelfTrain, ZeroStepSizeMatchesBaselineInEveryMode) {
  const auto& tr = fixture::tiny().tr;
  const auto base = outputs(decode_corpus(tr, docs(), DecodeMode::kBaseline, {}, {}));
  EXPECT_EQ(outputs(decode_corpus(tr, docs(), DecodeMode::kSelfTrain, adapt(0, 1), {})), base);
  EXPECT_EQ(outputs(decode_corpus(tr, docs(), DecodeMode::kSelfTrain, adapt(0, 3), {})), base);
  EXPECT_EQ(outputs(decode_corpus(tr, docs(), DecodeMode::kOracle, adapt(0, 1), {})), base);
}

TEST(SelfTrain, SingleSentenceDocumentMatchesBaseline) {
  // Adaptation only affects sentences after the one it was computed on.
  const auto& tr = fixture::tiny().tr;
  std::vector<Document> singles;
  for (const auto& d : docs()) singles.push_back({d.doc_id, {d.src[0]}, {d.ref[0]}});
  EXPECT_EQ(outputs(decode_corpus(tr, singles, DecodeMode::kSelfTrain, adapt(0.05, 1), {})),
            outputs(decode_corpus(tr, singles, DecodeMode::kBaseline, {}, {})));
}

TEST(SelfTrain, OnePassEqualsSingleSweep) {
  Translator a = fixture::tiny().tr;
  Translator b = fixture::tiny().tr;
  a.params = a.params.deep_copy();
  b.params = b.params.deep_copy();
  a.params.backup();
  b.params.backup();
  const auto& d = docs()[0];
  const auto ra = selftrain_decode_document(a, d, adapt(0.05, 4), {});
  const auto rb = multipass_decode(b, d, adapt(0.05, 1), {});
  EXPECT_EQ(ra.translations(), rb.translations());
  EXPECT_EQ(ra.pass_translations.size(), 1u);
  EXPECT_TRUE(a.params.values_equal(b.params));
}

TEST(SelfTrain, MultipassRecordsEveryPass) {
  Translator t = fixture::tiny().tr;
  t.params = t.params.deep_copy();
  t.params.backup();
  const auto r = multipass_decode(t, docs()[1], adapt(0.05, 3), {});
  ASSERT_EQ(r.pass_translations.size(), 3u);
  for (const auto& p : r.pass_translations) EXPECT_EQ(p.size(), docs()[1].src.size());
}

TEST(SelfTrain, OracleOnOwnOutputsEqualsSelfTraining) {
  const auto& tr = fixture::tiny().tr;
  // With references replaced by the model's own single-pass self-trained
  // output, the oracle's targets coincide with the self-training targets.
  const auto self = decode_corpus(tr, docs(), DecodeMode::kSelfTrain, adapt(0.05, 1), {});
  std::vector<Document> relabeled = docs();
  for (std::size_t i = 0; i < relabeled.size(); ++i) relabeled[i].ref = self[i].translations();
  const auto oracle = decode_corpus(tr, relabeled, DecodeMode::kOracle, adapt(0.05, 1), {});
  EXPECT_EQ(outputs(oracle), outputs(self));
}

TEST(SelfTrain, OracleRejectsMultiplePassesAndMissingRefs) {
  const auto& tr = fixture::tiny().tr;
  EXPECT_THROW(decode_corpus(tr, docs(), DecodeMode::kOracle, adapt(0.05, 2), {}), std::invalid_argument);
  std::vector<Document> bare{{"bare", docs()[0].src, {}}};
  const auto r = decode_corpus(tr, bare, DecodeMode::kOracle, adapt(0.05, 1), {});
  ASSERT_EQ(r.size(), 1u);
  EXPECT_FALSE(r[0].ok());
  EXPECT_NE(r[0].error.find("bare"), std::string::npos);
}

TEST(SelfTrain, DocumentsAreIndependent) {
  const auto& tr = fixture::tiny().tr;
  const auto forward = decode_corpus(tr, docs(), DecodeMode::kSelfTrain, adapt(0.05), {});
  std::vector<Document> reversed(docs().rbegin(), docs().rend());
  auto backward = decode_corpus(tr, reversed, DecodeMode::kSelfTrain, adapt(0.05), {});
  std::reverse(backward.begin(), backward.end());
  EXPECT_EQ(jsonl(forward), jsonl(backward));
}

TEST(SelfTrain, ParallelMatchesSerial) {
  const auto& tr = fixture::tiny().tr;
  for (auto mode : {DecodeMode::kBaseline, DecodeMode::kSelfTrain}) {
    const auto serial = jsonl(decode_corpus(tr, docs(), mode, adapt(0.05), {}, 1));
    EXPECT_EQ(jsonl(decode_corpus(tr, docs(), mode, adapt(0.05), {}, 4)), serial);
    EXPECT_EQ(jsonl(decode_corpus(tr, docs(), mode, adapt(0.05), {}, 1)), serial);
  }
}

TEST(SelfTrain, PriorIsRestoredBetweenDocuments) {
  Translator t = fixture::tiny().tr;
  t.params = t.params.deep_copy();
  const ModelParams before = t.params.deep_copy();
  t.params.backup();
  selftrain_decode_document(t, docs()[0], adapt(0.05, 1), {});
  EXPECT_FALSE(t.params.values_equal(before));
  t.params.restore();
  EXPECT_TRUE(t.params.values_equal(before));
  // decode_corpus never touches the caller's parameters.
  decode_corpus(fixture::tiny().tr, docs(), DecodeMode::kSelfTrain, adapt(0.05), {});
  EXPECT_TRUE(fixture::tiny().tr.params.values_equal(before));
}

TEST(SelfTrain, AdaptationWithoutPriorIsAnError) {
  Translator t = fixture::tiny().tr;
  t.params = t.params.deep_copy();
  t.params.clear_backup();
  EXPECT_THROW(selftrain_decode_document(t, docs()[0], adapt(0.05, 1), {}), std::logic_error);
}

TEST(SelfTrain, FailuresStayPerDocument) {
  const auto& tr = fixture::tiny().tr;
  std::string huge;
  for (int i = 0; i < 400; ++i) huge += "w0 ";
  std::vector<Document> mixed = {docs()[0], {"broken", {"w1", huge}, {"x", "y"}}, docs()[1]};
  const auto r = decode_corpus(tr, mixed, DecodeMode::kSelfTrain, adapt(0.05), {});
  EXPECT_TRUE(r[0].ok());
  EXPECT_FALSE(r[1].ok());
  EXPECT_EQ(r[1].doc_id, "broken");
  EXPECT_NE(r[1].error.find("sentence 1"), std::string::npos) << r[1].error;
  EXPECT_TRUE(r[2].ok());
  const auto e = evaluate(r, ParallelDocCorpus{mixed}, nullptr);
  EXPECT_EQ(e.failed_docs, 1u);
}

TEST(SelfTrain, ResultRecordsRoundTrip) {
  const auto& tr = fixture::tiny().tr;
  const auto rs = decode_corpus(tr, docs(), DecodeMode::kSelfTrain, adapt(0.05), {});
  const auto j = result_to_json(rs[0]);
  EXPECT_FALSE(j.contains("seconds"));
  const auto back = result_from_json(j);
  EXPECT_EQ(back.translations(), rs[0].translations());
  EXPECT_EQ(back.adapt.passes, 2);
  EXPECT_EQ(parse_mode("oracle"), DecodeMode::kOracle);
  EXPECT_THROW(parse_mode("beam"), std::invalid_argument);
}
