#include <set>

#include <gtest/gtest.h>

#include "dep/protocol.hpp"

namespace dep {
namespace {

TEST(Status, ClassifiesTheClosedSet) {
  EXPECT_EQ(classify_status(200), RetryClass::never);
  EXPECT_EQ(classify_status(400), RetryClass::never);
  EXPECT_EQ(classify_status(401), RetryClass::never);
  EXPECT_EQ(classify_status(404), RetryClass::never);
  EXPECT_EQ(classify_status(422), RetryClass::never);
  EXPECT_EQ(classify_status(429), RetryClass::backoff_and_reduce);
  EXPECT_EQ(classify_status(409), RetryClass::bounded_retry);
  EXPECT_EQ(classify_status(500), RetryClass::bounded_retry);
  EXPECT_EQ(classify_status(503), RetryClass::bounded_retry);
}

TEST(Status, UnknownCodesFallBack) {
  EXPECT_EQ(classify_status(418), RetryClass::never);
  EXPECT_EQ(classify_status(502), RetryClass::bounded_retry);
  EXPECT_EQ(classify_status(-1), RetryClass::never);
  EXPECT_FALSE(is_known_status(418));
  EXPECT_FALSE(to_status_code(418).has_value());
}

TEST(Status, TotalOverAllIntegers) {
  for (int code = -1000; code < 1000; ++code) {
    RetryClass rc = classify_status(code);
    if (is_known_status(code)) {
      EXPECT_EQ(rc, classify_status(*to_status_code(code))) << code;
    } else if (code >= 500 && code <= 599) {
      EXPECT_EQ(rc, RetryClass::bounded_retry) << code;
    } else {
      EXPECT_EQ(rc, RetryClass::never) << code;
    }
  }
}

TEST(Status, ReasonPhrases) {
  EXPECT_EQ(status_reason(StatusCode::too_many_requests), "Too Many Requests");
  for (StatusCode c : kAllStatusCodes) EXPECT_FALSE(status_reason(c).empty());
}

TEST(Lifecycle, Examples) {
  EXPECT_TRUE(validate_transition(LifecycleState::running, LifecycleState::paused));
  EXPECT_FALSE(validate_transition(LifecycleState::completed, LifecycleState::running));
  EXPECT_TRUE(validate_transition(LifecycleState::failed, LifecycleState::running));
}

TEST(Lifecycle, RejectionNamesBothStates) {
  auto v = validate_transition(LifecycleState::completed, LifecycleState::running);
  EXPECT_NE(v.describe().find("completed"), std::string::npos);
  EXPECT_NE(v.describe().find("running"), std::string::npos);
}

TEST(Lifecycle, StateNamesRoundTrip) {
  for (LifecycleState s : kAllLifecycleStates) EXPECT_EQ(parse_lifecycle_state(to_string(s)), s);
  EXPECT_FALSE(parse_lifecycle_state("done").has_value());
}

TEST(EvaluationIdTest, FormatAndRoundTrip) {
  std::set<std::string> seen;
  for (int i = 0; i < 1000; ++i) {
    EvaluationId id = new_evaluation_id();
    const std::string s = id.str();
    ASSERT_EQ(s.size(), 32u);
    for (char c : s) ASSERT_TRUE((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f')) << s;
    ASSERT_EQ(EvaluationId::parse(s), id);
    seen.insert(s);
  }
  EXPECT_EQ(seen.size(), 1000u);
}

TEST(EvaluationIdTest, RejectsMalformedText) {
  EXPECT_FALSE(EvaluationId::parse("").has_value());
  EXPECT_FALSE(EvaluationId::parse(std::string(31, 'a')).has_value());
  EXPECT_FALSE(EvaluationId::parse(std::string(32, 'A')).has_value());
  EXPECT_FALSE(EvaluationId::parse(std::string(32, 'g')).has_value());
  EXPECT_TRUE(EvaluationId::parse(std::string(32, 'f')).has_value());
}

TEST(EvaluationIdTest, EntropySourceIsUsed) {
  std::uint64_t n = 0;
  EvaluationId a = new_evaluation_id([&] { return ++n; });
  EXPECT_EQ(n, 2u);
  n = 0;
  EXPECT_EQ(new_evaluation_id([&] { return ++n; }), a);
}

TEST(EvaluationIdTest, EntropyFailureIsInternalError) {
  try {
    new_evaluation_id([]() -> std::uint64_t { throw std::runtime_error("no entropy"); });
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.status(), StatusCode::internal_error);
  }
}

TEST(Reports, SameResultsIgnoresIdentityAndTime) {
  EvaluationReport a;
  a.dataset_id = "d";
  a.overall["acc"] = 0.5;
  a.generated_at = "2026-01-01T00:00:00Z";
  EvaluationReport b = a;
  b.evaluation_id = new_evaluation_id();
  b.generated_at = "2026-02-01T00:00:00Z";
  EXPECT_TRUE(same_results(a, b));
  b.overall["acc"] = 0.25;
  EXPECT_FALSE(same_results(a, b));
}

}  // namespace
}  // namespace dep
