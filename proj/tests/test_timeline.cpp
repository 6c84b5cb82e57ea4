#include <doctest.h>

#include <fstream>
#include <regex>

#include "prism/manifest.hpp"
#include "prism/timeline.hpp"
#include "support.hpp"

using namespace prism;
using namespace prism::timeline;

namespace {

ClinicalEvent make_event(EventClass cls, const std::string& name, std::int64_t time,
                         std::optional<std::string> value = std::nullopt,
                         std::optional<std::string> flag = std::nullopt) {
  ClinicalEvent ev;
  ev.subject_id = "1001";
  ev.time = time;
  ev.event_class = cls;
  ev.name = name;
  ev.value = std::move(value);
  ev.flag = std::move(flag);
  return ev;
}

}  // namespace

TEST_CASE("normalize_text uppercases and joins with underscores") {
  CHECK(normalize_text(std::string("Chest pain"), "UNKNOWN") == "CHEST_PAIN");
  CHECK(normalize_text(std::nullopt, "UNKNOWN") == "UNKNOWN");
  CHECK(normalize_text(std::string("  eGFR "), "UNKNOWN") == "EGFR");
  CHECK(normalize_text(std::string("Troponin T (high sens.)"), "UNKNOWN") == "TROPONIN_T_HIGH_SENS.");
  CHECK(normalize_text(std::string("   "), "NONE") == "NONE");
  CHECK(normalize_text(std::string(""), "NO_COMMENTS") == "NO_COMMENTS");
}

TEST_CASE("normalize_text is idempotent") {
  Rng rng(3);
  const std::string charset = "abcXYZ 019 .-()/";
  for (int trial = 0; trial < 200; ++trial) {
    std::string s;
    for (std::size_t i = rng.below(12); i > 0; --i) s.push_back(charset[rng.below(charset.size())]);
    std::string once = normalize_text(s, "UNKNOWN");
    CHECK(normalize_text(once, "UNKNOWN") == once);
  }
}

TEST_CASE("render_token applies the per-class templates") {
  ReferenceRanges ranges;
  CHECK(render_token(make_event(EventClass::Lab, "Troponin T", 0, std::nullopt, std::string("abnormal")),
                     ranges) == "LAB_TROPONIN_T_ABNORMAL");
  CHECK(render_token(make_event(EventClass::Diagnosis, "icd9 diagnosis", 0, std::string("786.50")),
                     ranges) == "DX_786.50");
  CHECK(render_token(make_event(EventClass::Lab, "Sodium", 0), ranges) == "LAB_SODIUM_UNKNOWN");
  CHECK(render_token(make_event(EventClass::Demographic, "sex", 0, std::string("F")), ranges) ==
        "DEMO_SEX_F");
  CHECK(render_token(make_event(EventClass::Admission, "admission", 0, std::string("EMERGENCY")),
                     ranges) == "ADMIT_EMERGENCY");
  CHECK(render_token(make_event(EventClass::Discharge, "disposition", 0, std::string("home")),
                     ranges) == "DISCHARGE_HOME");
  CHECK(render_token(make_event(EventClass::Microbiology, "blood culture", 0), ranges) ==
        "MICRO_BLOOD_CULTURE_NO_COMMENTS");
}

TEST_CASE("numeric values discretize against reference ranges") {
  ReferenceRanges ranges;
  ranges.set("HEART_RATE", 60, 100);
  ranges.set("CREATININE", 0.6, 1.3);
  CHECK(render_token(make_event(EventClass::Omr, "heart rate", 0, std::string("72")), ranges) ==
        "OMR_HEART_RATE_NORMAL");
  CHECK(render_token(make_event(EventClass::Omr, "heart rate", 0, std::string("141")), ranges) ==
        "OMR_HEART_RATE_HIGH");
  CHECK(render_token(make_event(EventClass::Omr, "heart rate", 0, std::string("39")), ranges) ==
        "OMR_HEART_RATE_LOW");
  CHECK(render_token(make_event(EventClass::Omr, "heart rate", 0), ranges) == "OMR_HEART_RATE_UNKNOWN");
  // Lab flag takes precedence; the range fills in when the flag is absent.
  CHECK(render_token(make_event(EventClass::Lab, "creatinine", 0, std::string("2.0"),
                                std::string("high")),
                     ranges) == "LAB_CREATININE_HIGH");
  CHECK(render_token(make_event(EventClass::Lab, "creatinine", 0, std::string("2.0")), ranges) ==
        "LAB_CREATININE_HIGH");
  CHECK(render_token(make_event(EventClass::Omr, "weight", 0, std::string("80")), ranges) ==
        "OMR_WEIGHT_UNKNOWN");
}

TEST_CASE("order_events applies the fixed class precedence on equal timestamps") {
  ReferenceRanges ranges;
  std::vector<ClinicalEvent> events = {
      make_event(EventClass::Diagnosis, "dx", 100, std::string("410.71")),
      make_event(EventClass::Lab, "troponin t", 100, std::nullopt, std::string("high")),
      make_event(EventClass::Admission, "admission", 100, std::string("EMERGENCY")),
  };
  auto ordered = order_events(events, ranges);
  CHECK(ordered[0].event_class == EventClass::Admission);
  CHECK(ordered[1].event_class == EventClass::Lab);
  CHECK(ordered[2].event_class == EventClass::Diagnosis);
}

TEST_CASE("alphabetical tie-break within one class") {
  ReferenceRanges ranges;
  std::vector<ClinicalEvent> events = {
      make_event(EventClass::Lab, "creatinine", 50, std::nullopt, std::string("normal")),
      make_event(EventClass::Lab, "bun", 50, std::nullopt, std::string("normal")),
  };
  auto ordered = order_events(events, ranges);
  CHECK(ordered[0].name == "bun");
  CHECK(ordered[1].name == "creatinine");
}

TEST_CASE("time is the primary sort key") {
  ReferenceRanges ranges;
  std::vector<ClinicalEvent> events = {
      make_event(EventClass::Lab, "late", 900, std::nullopt, std::string("normal")),
      make_event(EventClass::Discharge, "disposition", 400, std::string("HOME")),
      make_event(EventClass::Lab, "early", 100, std::nullopt, std::string("normal")),
  };
  auto ordered = order_events(events, ranges);
  CHECK(ordered[0].time == 100);
  CHECK(ordered[1].time == 400);
  CHECK(ordered[2].time == 900);
}

TEST_CASE("demographics lead the document regardless of timestamp") {
  ReferenceRanges ranges;
  std::vector<ClinicalEvent> events = {
      make_event(EventClass::Admission, "admission", 10, std::string("EMERGENCY")),
      make_event(EventClass::Demographic, "sex", 500, std::string("M")),
      make_event(EventClass::Demographic, "age decade", 900, std::string("60S")),
  };
  auto ordered = order_events(events, ranges);
  CHECK(ordered[0].name == "age decade");
  CHECK(ordered[1].name == "sex");
  CHECK(ordered[2].event_class == EventClass::Admission);
}

TEST_CASE("order_events rejects mixed subjects") {
  ReferenceRanges ranges;
  auto a = make_event(EventClass::Lab, "x", 0, std::nullopt, std::string("normal"));
  auto b = a;
  b.subject_id = "other";
  CHECK_THROWS_AS(order_events({a, b}, ranges), ValidationError);
}

TEST_CASE("tokenize_patient is one token per event and order-insensitive") {
  ReferenceRanges ranges;
  std::vector<ClinicalEvent> events = {
      make_event(EventClass::Demographic, "sex", 0, std::string("F")),
      make_event(EventClass::Admission, "admission", 60, std::string("EMERGENCY")),
      make_event(EventClass::Lab, "troponin t", 120, std::nullopt, std::string("abnormal")),
      make_event(EventClass::Lab, "bun", 120, std::nullopt, std::string("normal")),
      make_event(EventClass::Diagnosis, "dx", 180, std::string("786.50")),
      make_event(EventClass::Discharge, "disposition", 240, std::string("HOME")),
  };
  auto doc = tokenize_patient(events, ranges);
  CHECK(doc.tokens.size() == events.size());

  CHECK_THROWS_AS(tokenize_patient({}, ranges), ValidationError);

  Rng rng(99);
  for (int shuffle = 0; shuffle < 100; ++shuffle) {
    auto permuted = events;
    rng.shuffle(permuted);
    CHECK(tokenize_patient(permuted, ranges) == doc);
  }
}

TEST_CASE("tokenize_patient matches an independent reference implementation") {
  ReferenceRanges ranges;
  ranges.set("HEART_RATE", 60, 100);
  Rng rng(2024);
  const std::vector<EventClass> classes = {EventClass::Demographic, EventClass::Admission,
                                           EventClass::Omr,          EventClass::Lab,
                                           EventClass::Microbiology, EventClass::Diagnosis,
                                           EventClass::Discharge};
  const std::vector<std::string> names = {"alpha", "beta", "gamma", "delta", "heart rate"};
  const std::vector<std::string> flags = {"normal", "abnormal", "high", "low", "odd"};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ClinicalEvent> events;
    std::size_t n = 1 + rng.below(14);
    for (std::size_t i = 0; i < n; ++i) {
      auto ev = make_event(classes[rng.below(classes.size())], names[rng.below(names.size())],
                           static_cast<std::int64_t>(rng.below(5)) * 300);
      if (rng.uniform() < 0.7) ev.value = std::to_string(40 + rng.below(100));
      if (rng.uniform() < 0.5) ev.flag = flags[rng.below(flags.size())];
      events.push_back(std::move(ev));
    }
    auto doc = tokenize_patient(events, ranges);
    CHECK(doc.tokens == testsupport::reference_tokenize(events, ranges));
  }
}

TEST_CASE("tokens stay within the uppercase alphabet") {
  ReferenceRanges ranges;
  std::regex alphabet("[A-Z0-9_\\[\\]\\.]+");
  Rng rng(55);
  const std::vector<EventClass> classes = {EventClass::Demographic, EventClass::Admission,
                                           EventClass::Omr,          EventClass::Lab,
                                           EventClass::Microbiology, EventClass::Diagnosis,
                                           EventClass::Discharge};
  for (int trial = 0; trial < 300; ++trial) {
    auto ev = make_event(classes[rng.below(classes.size())], "Mixed Case (name)/2", 0);
    if (rng.uniform() < 0.5) ev.value = "some value - 12.5 mg";
    if (rng.uniform() < 0.5) ev.flag = "Strange Flag!";
    std::string token = render_token(ev, ranges);
    CHECK(std::regex_match(token, alphabet));
  }
}

TEST_CASE("tokenize_corpus converts each patient file and reruns byte-identically") {
  auto in_dir = testsupport::fresh_dir("tok_in");
  auto out_dir = testsupport::fresh_dir("tok_out");
  ReferenceRanges ranges;

  for (int p = 0; p < 10; ++p) {
    std::vector<ClinicalEvent> events;
    ClinicalEvent ev = make_event(EventClass::Demographic, "sex", 0, std::string(p % 2 ? "M" : "F"));
    ev.subject_id = std::to_string(p);
    events.push_back(ev);
    ClinicalEvent lab = make_event(EventClass::Lab, "bun", 600, std::nullopt, std::string("normal"));
    lab.subject_id = std::to_string(p);
    events.push_back(lab);
    write_event_csv(in_dir / ("patient_" + std::to_string(p) + ".csv"), events);
  }
  auto summary = tokenize_corpus(in_dir, out_dir, ranges);
  CHECK(summary.n_docs == 10);
  CHECK(summary.n_tokens == 20);
  CHECK(summary.failures.empty());

  auto hash_a = prism::manifest::hash_tree(out_dir);
  auto summary2 = tokenize_corpus(in_dir, out_dir, ranges);
  CHECK(summary2.n_docs == 10);
  CHECK(prism::manifest::hash_tree(out_dir) == hash_a);

  auto docs = read_token_dir(out_dir);
  CHECK(docs.size() == 10);
  CHECK(docs[0].tokens.size() == 2);
}

TEST_CASE("tokenize_corpus of an empty directory yields nothing") {
  auto in_dir = testsupport::fresh_dir("tok_empty_in");
  auto out_dir = testsupport::fresh_dir("tok_empty_out");
  ReferenceRanges ranges;
  auto summary = tokenize_corpus(in_dir, out_dir, ranges);
  CHECK(summary.n_docs == 0);
  CHECK(summary.n_tokens == 0);
}

TEST_CASE("per-file parse failures are recorded and processing continues") {
  auto in_dir = testsupport::fresh_dir("tok_fail_in");
  auto out_dir = testsupport::fresh_dir("tok_fail_out");
  ReferenceRanges ranges;

  std::ofstream bad(in_dir / "patient_bad.csv");
  bad << "not,a,valid,header\n1,2,3,4\n";
  bad.close();

  auto ev = make_event(EventClass::Demographic, "sex", 0, std::string("F"));
  ev.subject_id = "good";
  std::vector<ClinicalEvent> good = {ev};
  write_event_csv(in_dir / "patient_good.csv", good);

  auto summary = tokenize_corpus(in_dir, out_dir, ranges);
  CHECK(summary.n_docs == 1);
  CHECK(summary.failures.size() == 1);
  CHECK(summary.failures[0].find("patient_bad.csv") != std::string::npos);
}

TEST_CASE("token documents are single space-separated lines with trailing newline") {
  TokenDocument doc{"s", {"A", "B", "C"}};
  CHECK(to_line(doc) == "A B C\n");
}

TEST_CASE("the shipped reference ranges load and bucket the default grammar vitals") {
  auto ranges = ReferenceRanges::load(std::filesystem::path(PRISM_CONFIG_DIR) / "reference_ranges.json");
  CHECK(render_token(make_event(EventClass::Omr, "heart rate", 0, std::string("72")), ranges) ==
        "OMR_HEART_RATE_NORMAL");
  CHECK(render_token(make_event(EventClass::Omr, "blood pressure systolic", 0, std::string("151")),
                     ranges) == "OMR_BLOOD_PRESSURE_SYSTOLIC_HIGH");
  CHECK(render_token(make_event(EventClass::Lab, "creatinine", 0, std::string("2.2")), ranges) ==
        "LAB_CREATININE_HIGH");
}

TEST_CASE("timestamps parse and format as ISO-8601 UTC") {
  CHECK(parse_instant("2015-01-01T00:00:00+00:00") == 1420070400);
  CHECK(parse_instant("2015-01-01T00:00:00Z") == 1420070400);
  CHECK(parse_instant("2015-01-01T01:30:00+01:30") == 1420070400);
  CHECK(parse_instant("2014-12-31T22:00:00-02:00") == 1420070400);
  CHECK(parse_instant("2015-01-01T00:00:00.500Z") == 1420070400);
  CHECK(format_instant(1420070400) == "2015-01-01T00:00:00+00:00");
  CHECK(parse_instant(format_instant(987654321)) == 987654321);
  CHECK_THROWS_AS(parse_instant("2015-01-01"), ValidationError);
  CHECK_THROWS_AS(parse_instant("2015-13-01T00:00:00Z"), ValidationError);
  CHECK_THROWS_AS(parse_instant("2015-01-01T00:00:00"), ValidationError);
}
