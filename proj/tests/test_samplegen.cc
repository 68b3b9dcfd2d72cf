#include <algorithm>
#include <set>
#include <sstream>

#include "doctest.h"
#include "dopt/samplegen.h"
#include "dopt/synth.h"
#include "support.h"

using namespace dopt;
using namespace dopt::samplegen;
using corpus::Article;
using corpus::Paragraph;
using corpus::Task;

namespace {

Paragraph Sentences(const std::string& prefix, int n) {
  Paragraph p;
  for (int i = 1; i <= n; ++i) p.push_back(prefix + std::to_string(i) + ".");
  return p;
}

std::vector<Article> SmallCorpus(int articles, std::uint64_t seed) {
  synth::CorpusOptions o;
  o.articles = articles;
  o.seed = seed;
  return synth::MakeCorpus(o);
}

Provenance Window(const std::string& id, int paragraph, int start, int window) {
  Provenance p;
  p.source_id = id;
  p.paragraph = paragraph;
  p.start = start;
  p.window = window;
  return p;
}

Dialogue MakeDialogue(const std::string& id, int n) {
  Dialogue d{id, {}};
  for (int i = 1; i <= n; ++i) d.utterances.push_back(id + " u" + std::to_string(i));
  return d;
}

bool AllValid(const std::vector<Sample>& samples, const SourceIndex& index,
              const GenerationConfig& cfg) {
  for (const auto& s : samples) {
    const auto r = ValidateSample(s, index, &cfg);
    if (!r.ok) {
      MESSAGE(r.reasons.front());
      return false;
    }
  }
  return true;
}

std::string Jsonl(const std::vector<Sample>& samples) {
  std::ostringstream os;
  WriteSamples(samples, os);
  return os.str();
}

}  // namespace

TEST_CASE("config validation") {
  GenerationConfig c;
  CHECK_NOTHROW(c.Validate());
  c.k = 2;
  CHECK_THROWS_AS(c.Validate(), ConfigError);
  c = {};
  c.max_words = 0;
  CHECK_THROWS_AS(c.Validate(), ConfigError);
}

TEST_CASE("general insertion over two five-sentence paragraphs") {
  const Article a{"a", "", {Sentences("s", 5), Sentences("t", 5)}};
  GenerationConfig cfg;
  SourceIndex index;
  const std::vector<Article> all{a};
  index.Add(all);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const auto samples = GenInsertionGeneral(a, cfg, rng);
    REQUIRE(samples.size() == 2);
    const auto& p0 = *samples[0].provenance;
    const auto& p1 = *samples[1].provenance;
    // The two A-pairs and the two B-pairs are disjoint.
    CHECK(std::abs(p0.start - p1.start) >= 2);
    CHECK(std::abs(p0.partner_start - p1.partner_start) >= 2);
    for (const auto& s : samples) {
      const auto pattern = SpeakerPattern(s);
      CHECK((pattern == "AABB" || pattern == "ABAB" || pattern == "ABBA"));
      CHECK(s.tail.size() == 3);
      CHECK(s.tail[static_cast<std::size_t>(s.label)] ==
            a.paragraphs[0][static_cast<std::size_t>(s.provenance->start) + 1]);
      CHECK(ValidateSample(s, index, &cfg).ok);
    }
  }
}

TEST_CASE("single qualifying paragraph gives no insertion sample") {
  const Article a{"a", "", {Sentences("s", 5)}};
  Rng rng(1);
  CHECK(GenInsertionGeneral(a, GenerationConfig{}, rng).empty());
  const Article b{"b", "", {Sentences("s", 5), Sentences("t", 4)}};
  CHECK(GenInsertionGeneral(b, GenerationConfig{}, rng).empty());
}

TEST_CASE("partner paragraph may serve as the next anchor paragraph") {
  const Article a{"a", "", {Sentences("s", 6), Sentences("t", 6), Sentences("r", 6)}};
  Rng rng(3);
  const auto samples = GenInsertionGeneral(a, GenerationConfig{}, rng);
  REQUIRE(samples.size() == 4);
  CHECK(samples[2].provenance->paragraph == 1);
  CHECK(samples[2].provenance->partner_paragraph == 2);
}

TEST_CASE("short paragraphs in between are skipped when pairing") {
  const Article a{"a", "", {Sentences("s", 5), Sentences("x", 2), Sentences("t", 5)}};
  Rng rng(3);
  const auto samples = GenInsertionGeneral(a, GenerationConfig{}, rng);
  REQUIRE(samples.size() == 2);
  CHECK(samples[0].provenance->partner_paragraph == 2);
}

TEST_CASE("deletion label law") {
  const Article a{"a", "", {Sentences("u", 6)}};
  const std::vector<Article> all{a};
  SourceIndex index;
  index.Add(all);
  GenerationConfig cfg;
  std::set<int> labels;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const auto samples = GenDeletionGeneral(a, cfg, rng);
    REQUIRE(samples.size() == 1);
    const auto& s = samples[0];
    const auto& p = *s.provenance;
    const auto& para = a.paragraphs[0];
    // 1-based deleted index i gives label i-1, and remaining[label] is u_{i+1}.
    const auto i = static_cast<std::size_t>(s.label) + 1;
    CHECK(s.deleted == para[static_cast<std::size_t>(p.start) + i - 1]);
    CHECK(s.remaining[static_cast<std::size_t>(s.label)] ==
          para[static_cast<std::size_t>(p.start) + i]);
    CHECK(s.remaining.size() == 4);
    CHECK(ValidateSample(s, index, &cfg).ok);
    labels.insert(s.label);
  }
  CHECK(labels == std::set<int>{0, 1, 2, 3});
}

TEST_CASE("deletion example: deleting u3 gives label 2") {
  DeletionSample s;
  s.remaining = {"u1.", "u2.", "u4.", "u5."};
  s.deleted = "u3.";
  s.label = 2;
  s.provenance = Window("a", 0, 0, 5);
  const std::vector<Article> all{{"a", "", {Sentences("u", 6)}}};
  SourceIndex index;
  index.Add(all);
  CHECK(ValidateSample(s, index).ok);
}

TEST_CASE("paragraph with exactly k sentences yields no window") {
  const Article a{"a", "", {Sentences("u", 5)}};
  Rng rng(0);
  CHECK(GenDeletionGeneral(a, GenerationConfig{}, rng).empty());
}

TEST_CASE("dense mode takes disjoint windows") {
  const Article a{"a", "", {Sentences("u", 12)}};
  GenerationConfig cfg;
  cfg.dense = true;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto samples = GenDeletionGeneral(a, cfg, rng);
    REQUIRE(samples.size() == 2);
    CHECK(samples[1].provenance->start - samples[0].provenance->start >= 5);
    CHECK(samples[1].provenance->start + 5 <= 12);
  }
}

TEST_CASE("replacement takes donors from other articles") {
  const auto articles = SmallCorpus(20, 4);
  GenerationConfig cfg;
  const auto samples = GenerateGeneral(articles, Task::kReplacement, cfg);
  REQUIRE(!samples.empty());
  SourceIndex index;
  index.Add(articles);
  for (const auto& s : samples) {
    const auto& r = std::get<ReplacementSample>(s);
    CHECK(r.provenance->donor_id != r.provenance->source_id);
    CHECK(r.utterances.size() == 5);
  }
  CHECK(AllValid(samples, index, cfg));

  Rng rng(1);
  Article big{"big", "", {Sentences("u", 8)}};
  const DonorPool only_self(std::vector<Article>{big});
  CHECK_THROWS_AS(GenReplacementGeneral(big, only_self, cfg, rng), ConfigError);
}

TEST_CASE("replacement at position 2 has label 1") {
  ReplacementSample s;
  s.utterances = {"u1.", "donor.", "u3.", "u4.", "u5."};
  s.label = 1;
  Provenance p = Window("a", 0, 0, 5);
  p.donor_id = "b";
  p.donor_paragraph = 0;
  p.donor_sentence = 0;
  s.provenance = p;
  const std::vector<Article> all{{"a", "", {Sentences("u", 6)}},
                                 {"b", "", {{"donor."}}}};
  SourceIndex index;
  index.Add(all);
  CHECK(ValidateSample(s, index).ok);
  s.label = 2;
  CHECK_FALSE(ValidateSample(s, index).ok);
}

TEST_CASE("domain insertion") {
  GenerationConfig cfg;
  Rng rng(0);
  CHECK_FALSE(GenInsertionDomain(MakeDialogue("d", 2), cfg, rng).has_value());
  const auto d = MakeDialogue("d", 5);
  const std::vector<Dialogue> all{d};
  SourceIndex index;
  index.Add(all);
  std::set<int> labels;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng r(seed);
    const auto s = GenInsertionDomain(d, cfg, r);
    REQUIRE(s.has_value());
    CHECK(s->anchor == "d u1");
    CHECK(s->tail.size() == 4);
    CHECK(s->tail[static_cast<std::size_t>(s->label)] == "d u2");
    std::vector<std::string> rest = s->tail;
    rest.erase(rest.begin() + s->label);
    CHECK(rest == std::vector<std::string>{"d u3", "d u4", "d u5"});
    CHECK(ValidateSample(*s, index, &cfg).ok);
    labels.insert(s->label);
  }
  CHECK(labels == std::set<int>{0, 1, 2, 3});

  InsertionSample manual;
  manual.variant = Variant::kDomain;
  manual.anchor = "d u1";
  manual.tail = {"d u3", "d u4", "d u2", "d u5"};
  manual.label = 2;
  manual.provenance = Window("d", -1, 0, 5);
  CHECK(ValidateSample(manual, index).ok);
}

TEST_CASE("domain deletion and replacement on short dialogues") {
  GenerationConfig cfg;
  Rng rng(2);
  const auto d3 = GenDeletionDomain(MakeDialogue("d", 3), cfg, rng);
  REQUIRE(d3.has_value());
  CHECK(d3->remaining.size() == 2);
  CHECK(d3->label <= 1);
  CHECK_FALSE(GenDeletionDomain(MakeDialogue("d", 2), cfg, rng).has_value());

  const std::vector<Dialogue> dialogues{MakeDialogue("x", 4), MakeDialogue("y", 3)};
  const DonorPool donors(dialogues);
  SourceIndex index;
  index.Add(dialogues);
  for (int i = 0; i < 50; ++i) {
    const auto r = GenReplacementDomain(dialogues[0], donors, cfg, rng);
    REQUIRE(r.has_value());
    CHECK(r->label >= 0);
    CHECK(r->label <= 3);
    CHECK(r->provenance->donor_id == "y");
    CHECK(ValidateSample(*r, index, &cfg).ok);
  }
  const std::vector<Dialogue> lonely{MakeDialogue("z", 4)};
  const DonorPool none(lonely);
  CHECK_FALSE(GenReplacementDomain(lonely[0], none, cfg, rng).has_value());
}

TEST_CASE("validator rejects perturbed samples") {
  const auto articles = SmallCorpus(30, 8);
  SourceIndex index;
  index.Add(articles);
  GenerationConfig cfg;
  const auto ins = GenerateGeneral(articles, Task::kInsertion, cfg);
  const auto del = GenerateGeneral(articles, Task::kDeletion, cfg);
  REQUIRE(!ins.empty());
  REQUIRE(!del.empty());

  auto bumped = std::get<DeletionSample>(del[0]);
  bumped.label = (bumped.label + 1) % 4;
  const auto r1 = ValidateSample(bumped, index, &cfg);
  CHECK_FALSE(r1.ok);
  CHECK(r1.reasons.front().rfind("label mismatch", 0) == 0);

  // Swap B's internal order.
  auto swapped = std::get<InsertionSample>(ins[0]);
  std::vector<std::size_t> b_slots;
  for (std::size_t j = 0; j < 3; ++j) {
    if (static_cast<int>(j) != swapped.label) b_slots.push_back(j);
  }
  std::swap(swapped.tail[b_slots[0]], swapped.tail[b_slots[1]]);
  const auto r2 = ValidateSample(swapped, index, &cfg);
  CHECK_FALSE(r2.ok);
  CHECK(r2.reasons.front().rfind("order violation", 0) == 0);

  auto no_prov = std::get<DeletionSample>(del[0]);
  no_prov.provenance.reset();
  CHECK_THROWS_AS(ValidateSample(no_prov, index), FormatError);

  auto last = std::get<DeletionSample>(del[0]);
  const auto& src = *index.FindArticle(last.provenance->source_id);
  const auto& window_para = src.paragraphs[static_cast<std::size_t>(last.provenance->paragraph)];
  const auto start = static_cast<std::size_t>(last.provenance->start);
  last.remaining.assign(window_para.begin() + static_cast<std::ptrdiff_t>(start),
                        window_para.begin() + static_cast<std::ptrdiff_t>(start + 4));
  last.deleted = window_para[start + 4];
  last.label = 3;
  const auto r3 = ValidateSample(last, index, &cfg);
  CHECK_FALSE(r3.ok);
  CHECK(r3.reasons.front() == "deleted utterance is the last of the window");

  GenerationConfig tight = cfg;
  tight.max_words = 5;
  CHECK_FALSE(ValidateSample(del[0], index, &tight).ok);
}

TEST_CASE("word cap drops samples") {
  const auto articles = SmallCorpus(20, 2);
  for (Task t : corpus::kAllTasks) {
    const auto loose = GenerateGeneral(articles, t, GenerationConfig{});
    REQUIRE(!loose.empty());
    std::size_t longest = 0;
    for (const auto& s : loose) longest = std::max(longest, WordCount(s));
    GenerationConfig cfg;
    cfg.max_words = static_cast<int>(longest) - 1;
    const auto capped = GenerateGeneral(articles, t, cfg);
    CHECK(capped.size() < loose.size());
    for (const auto& s : capped) CHECK(WordCount(s) < longest);
  }
}

TEST_CASE("generation is identical across worker counts") {
  const auto articles = SmallCorpus(40, 6);
  GenerationConfig one, four;
  four.workers = 4;
  for (Task t : corpus::kAllTasks) {
    CHECK(Jsonl(GenerateGeneral(articles, t, one)) ==
          Jsonl(GenerateGeneral(articles, t, four)));
  }
  auto reversed = articles;
  std::reverse(reversed.begin(), reversed.end());
  CHECK(Jsonl(GenerateGeneral(articles, Task::kDeletion, one)) ==
        Jsonl(GenerateGeneral(reversed, Task::kDeletion, one)));
}

TEST_CASE("every generated sample validates") {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    const auto articles = SmallCorpus(30, seed);
    SourceIndex index;
    index.Add(articles);
    GenerationConfig cfg;
    cfg.seed = seed;
    cfg.dense = seed == 2;
    for (Task t : corpus::kAllTasks) {
      CHECK(AllValid(GenerateGeneral(articles, t, cfg), index, cfg));
    }
    std::vector<Dialogue> dialogues;
    Rng rng(seed);
    for (int i = 0; i < 40; ++i) {
      dialogues.push_back(MakeDialogue("dlg" + std::to_string(i),
                                       2 + static_cast<int>(UniformIndex(rng, 8))));
    }
    index.Add(dialogues);
    for (Task t : corpus::kAllTasks) {
      const auto samples = GenerateDomain(dialogues, t, cfg);
      CHECK(!samples.empty());
      CHECK(AllValid(samples, index, cfg));
    }
  }
}

TEST_CASE("jsonl round trip per variant") {
  const auto articles = SmallCorpus(20, 9);
  for (Task t : corpus::kAllTasks) {
    const auto samples = GenerateGeneral(articles, t, GenerationConfig{});
    std::stringstream buf(Jsonl(samples));
    CHECK(ReadSamples(buf) == samples);
  }
  const std::vector<Dialogue> dialogues{MakeDialogue("p", 6), MakeDialogue("q", 4)};
  const auto domain = GenerateDomain(dialogues, Task::kInsertion, GenerationConfig{});
  std::stringstream buf(Jsonl(domain));
  const auto back = ReadSamples(buf);
  CHECK(back == domain);
  CHECK(std::get<InsertionSample>(back[0]).variant == Variant::kDomain);
}

TEST_CASE("unknown variant tag and schema errors carry line numbers") {
  std::stringstream bad(
      "{\"variant\":\"deletion\",\"remaining\":[\"a\"],\"deleted\":\"b\",\"label\":0}\n"
      "{\"variant\":\"shuffle\",\"label\":0}\n");
  try {
    ReadSamples(bad);
    FAIL("expected an error");
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    CHECK(msg.rfind("line 2", 0) == 0);
    CHECK(msg.find("shuffle") != std::string::npos);
  }
  std::stringstream missing("{\"variant\":\"insertion\",\"label\":0}\n");
  CHECK_THROWS_AS(ReadSamples(missing), FormatError);
}

TEST_CASE("label distributions are uniform") {
  synth::CorpusOptions o;
  o.articles = 300;
  o.seed = 17;
  o.min_sentences = 6;
  o.max_sentences = 12;
  const auto articles = synth::MakeCorpus(o);
  GenerationConfig cfg;
  cfg.dense = true;
  const std::size_t n_labels[] = {3, 4, 5};
  for (Task t : corpus::kAllTasks) {
    const auto samples = GenerateGeneral(articles, t, cfg);
    std::vector<std::size_t> counts(n_labels[static_cast<int>(t)], 0);
    for (const auto& s : samples) ++counts.at(static_cast<std::size_t>(LabelOf(s)));
    const double p = testing::UniformChiSquareP(counts);
    MESSAGE(std::string(corpus::TaskName(t)) << ": n=" << samples.size() << " p=" << p);
    CHECK(p > 0.01);
  }
}

TEST_CASE("stats table layout") {
  GenerationStats stats;
  stats.tasks[0] = {10, 2, 1234, 56};
  stats.tasks[1] = {10, 2, 99, 7};
  stats.tasks[2] = {10, 2, 5, 0};
  const std::string table = RenderStatsTable(stats);
  const std::string expected =
      "Statistics     | Train | Valid\n"
      "---------------+-------+------\n"
      "#articles/task |    10 |     2\n"
      "Insertion      |  1234 |    56\n"
      "Deletion       |    99 |     7\n"
      "Replacement    |     5 |     0\n";
  CHECK(table == expected);
  const auto j = StatsToJson(stats);
  CHECK(j["tasks"]["insertion"]["train"] == 1234);
  CHECK(j["schema_version"] == 1);
}
