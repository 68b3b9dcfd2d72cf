#include "dopt/samplegen.h"

#include <algorithm>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <thread>

namespace dopt::samplegen {
namespace {

using nlohmann::json;

std::size_t Words(const std::vector<std::string>& utterances) {
  std::size_t n = 0;
  for (const auto& u : utterances) n += CountWords(u);
  return n;
}

std::vector<std::string> Window(const std::vector<std::string>& source,
                                std::size_t start, std::size_t len) {
  return {source.begin() + static_cast<std::ptrdiff_t>(start),
          source.begin() + static_cast<std::ptrdiff_t>(start + len)};
}

std::vector<std::string> Without(const std::vector<std::string>& items,
                                 std::size_t index) {
  std::vector<std::string> out;
  out.reserve(items.size() - 1);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i != index) out.push_back(items[i]);
  }
  return out;
}

// Start indices of the windows sampled from a paragraph of n sentences;
// requires n > k ("more than k sentences").
std::vector<std::size_t> WindowStarts(std::size_t n, std::size_t k,
                                      bool dense, Rng& rng) {
  if (n <= k) return {};
  if (!dense) return {UniformIndex(rng, n - k + 1)};
  const std::size_t m = n / k;
  const std::size_t offset = UniformIndex(rng, n - m * k + 1);
  std::vector<std::size_t> starts;
  for (std::size_t j = 0; j < m; ++j) starts.push_back(offset + j * k);
  return starts;
}

// Two disjoint adjacent pairs (a, a+1), (b, b+1) with a+2 <= b, drawn
// uniformly among all such placements in n sentences.
std::pair<std::size_t, std::size_t> DisjointPairs(std::size_t n, Rng& rng) {
  // For a given a, b ranges over [a+2, n-2]: n-3-a choices.
  const std::size_t total = (n - 3) * (n - 2) / 2;
  std::size_t r = UniformIndex(rng, total);
  for (std::size_t a = 0;; ++a) {
    const std::size_t choices = n - 3 - a;
    if (r < choices) return {a, a + 2 + r};
    r -= choices;
  }
}

template <typename Fn>
void ParallelFor(std::size_t n, int workers, Fn&& fn) {
  const std::size_t threads =
      std::min<std::size_t>(std::max(workers, 1), std::max<std::size_t>(n, 1));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::string StreamKey(Task task, const std::string& id, bool domain) {
  return std::string(domain ? "domain:" : "general:") + corpus::TaskName(task) +
         ":" + id;
}

std::vector<std::size_t> OrderById(std::size_t n,
                                   const std::function<const std::string&(
                                       std::size_t)>& id_of) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return id_of(a) < id_of(b);
                   });
  return order;
}

}  // namespace

void GenerationConfig::Validate() const {
  if (k < 3) throw ConfigError("k must be >= 3");
  if (max_words <= 0) throw ConfigError("max_words must be > 0");
  if (min_para_sentences_insertion < 4) {
    throw ConfigError("min_para_sentences_insertion must be >= 4");
  }
}

Task TaskOf(const Sample& sample) {
  return static_cast<Task>(sample.index());
}

int LabelOf(const Sample& sample) {
  return std::visit([](const auto& s) { return s.label; }, sample);
}

std::size_t WordCount(const Sample& sample) {
  struct Visitor {
    std::size_t operator()(const InsertionSample& s) const {
      return CountWords(s.anchor) + Words(s.tail);
    }
    std::size_t operator()(const DeletionSample& s) const {
      return Words(s.remaining) + CountWords(s.deleted);
    }
    std::size_t operator()(const ReplacementSample& s) const {
      return Words(s.utterances);
    }
  };
  return std::visit(Visitor{}, sample);
}

std::string SpeakerPattern(const InsertionSample& sample) {
  std::string pattern = "A";
  for (std::size_t i = 0; i < sample.tail.size(); ++i) {
    pattern.push_back(static_cast<int>(i) == sample.label ? 'A' : 'B');
  }
  return pattern;
}

// ---- DonorPool ----

DonorPool::DonorPool(const std::vector<Article>& articles) {
  for (const auto& a : articles) {
    Source s;
    s.id = &a.id;
    for (const auto& p : a.paragraphs) s.paragraphs.push_back(&p);
    sources_.push_back(std::move(s));
  }
  Finalize();
}

DonorPool::DonorPool(const std::vector<Dialogue>& dialogues)
    : dialogues_(true) {
  for (const auto& d : dialogues) {
    Source s;
    s.id = &d.id;
    s.paragraphs.push_back(&d.utterances);
    sources_.push_back(std::move(s));
  }
  Finalize();
}

void DonorPool::Finalize() {
  for (std::size_t i = 0; i < sources_.size(); ++i) {
    Source& s = sources_[i];
    s.begin = total_;
    std::size_t acc = 0;
    for (const Paragraph* p : s.paragraphs) {
      s.offsets.push_back(acc);
      acc += p->size();
    }
    s.count = acc;
    total_ += acc;
    by_id_.emplace(*s.id, i);
  }
}

std::optional<DonorPool::Draw> DonorPool::Sample(
    Rng& rng, const std::string& exclude_id) const {
  std::size_t lo = 0, excluded = 0;
  if (auto it = by_id_.find(exclude_id); it != by_id_.end()) {
    lo = sources_[it->second].begin;
    excluded = sources_[it->second].count;
  }
  if (total_ <= excluded) return std::nullopt;
  std::size_t x = UniformIndex(rng, total_ - excluded);
  if (x >= lo) x += excluded;
  auto it = std::upper_bound(
      sources_.begin(), sources_.end(), x,
      [](std::size_t v, const Source& s) { return v < s.begin; });
  const Source& src = *(it - 1);
  const std::size_t local = x - src.begin;
  auto pit = std::upper_bound(src.offsets.begin(), src.offsets.end(), local);
  const std::size_t para = static_cast<std::size_t>(pit - src.offsets.begin()) - 1;
  const std::size_t sent = local - src.offsets[para];
  return Draw{&(*src.paragraphs[para])[sent], src.id,
              dialogues_ ? -1 : static_cast<int>(para),
              static_cast<int>(sent)};
}

// ---- general corpus ----

std::vector<InsertionSample> GenInsertionGeneral(const Article& article,
                                                 const GenerationConfig& cfg,
                                                 Rng& rng) {
  std::vector<std::size_t> qualifying;
  for (std::size_t i = 0; i < article.paragraphs.size(); ++i) {
    if (article.paragraphs[i].size() >=
        static_cast<std::size_t>(cfg.min_para_sentences_insertion)) {
      qualifying.push_back(i);
    }
  }
  std::vector<InsertionSample> out;
  for (std::size_t q = 0; q + 1 < qualifying.size(); ++q) {
    const Paragraph& pa = article.paragraphs[qualifying[q]];
    const Paragraph& pb = article.paragraphs[qualifying[q + 1]];
    const auto [a1, a2] = DisjointPairs(pa.size(), rng);
    const auto [b1, b2] = DisjointPairs(pb.size(), rng);
    const std::pair<std::size_t, std::size_t> pairs[2] = {{a1, b1}, {a2, b2}};
    for (const auto& [a, b] : pairs) {
      const std::size_t pos = UniformIndex(rng, 3);
      InsertionSample s;
      s.variant = Variant::kGeneral;
      s.anchor = pa[a];
      s.tail = {pb[b], pb[b + 1]};
      s.tail.insert(s.tail.begin() + static_cast<std::ptrdiff_t>(pos),
                    pa[a + 1]);
      s.label = static_cast<int>(pos);
      Provenance prov;
      prov.source_id = article.id;
      prov.paragraph = static_cast<int>(qualifying[q]);
      prov.start = static_cast<int>(a);
      prov.window = 4;
      prov.partner_paragraph = static_cast<int>(qualifying[q + 1]);
      prov.partner_start = static_cast<int>(b);
      s.provenance = std::move(prov);
      if (WordCount(s) > static_cast<std::size_t>(cfg.max_words)) continue;
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<DeletionSample> GenDeletionGeneral(const Article& article,
                                               const GenerationConfig& cfg,
                                               Rng& rng) {
  const std::size_t k = static_cast<std::size_t>(cfg.k);
  std::vector<DeletionSample> out;
  for (std::size_t pi = 0; pi < article.paragraphs.size(); ++pi) {
    const Paragraph& p = article.paragraphs[pi];
    for (std::size_t start : WindowStarts(p.size(), k, cfg.dense, rng)) {
      const auto window = Window(p, start, k);
      const std::size_t d = UniformIndex(rng, k - 1);  // u_1..u_{k-1}
      DeletionSample s;
      s.variant = Variant::kGeneral;
      s.remaining = Without(window, d);
      s.deleted = window[d];
      s.label = static_cast<int>(d);
      Provenance prov;
      prov.source_id = article.id;
      prov.paragraph = static_cast<int>(pi);
      prov.start = static_cast<int>(start);
      prov.window = static_cast<int>(k);
      s.provenance = std::move(prov);
      if (WordCount(s) > static_cast<std::size_t>(cfg.max_words)) continue;
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<ReplacementSample> GenReplacementGeneral(
    const Article& article, const DonorPool& donors,
    const GenerationConfig& cfg, Rng& rng) {
  const std::size_t k = static_cast<std::size_t>(cfg.k);
  std::vector<ReplacementSample> out;
  for (std::size_t pi = 0; pi < article.paragraphs.size(); ++pi) {
    const Paragraph& p = article.paragraphs[pi];
    for (std::size_t start : WindowStarts(p.size(), k, cfg.dense, rng)) {
      const std::size_t i = UniformIndex(rng, k);
      const auto donor = donors.Sample(rng, article.id);
      if (!donor) {
        throw ConfigError("empty donor pool for article '" + article.id + "'");
      }
      ReplacementSample s;
      s.variant = Variant::kGeneral;
      s.utterances = Window(p, start, k);
      s.utterances[i] = *donor->text;
      s.label = static_cast<int>(i);
      Provenance prov;
      prov.source_id = article.id;
      prov.paragraph = static_cast<int>(pi);
      prov.start = static_cast<int>(start);
      prov.window = static_cast<int>(k);
      prov.donor_id = *donor->source_id;
      prov.donor_paragraph = donor->paragraph;
      prov.donor_sentence = donor->sentence;
      s.provenance = std::move(prov);
      if (WordCount(s) > static_cast<std::size_t>(cfg.max_words)) continue;
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<Sample> GenerateGeneral(const std::vector<Article>& articles,
                                    Task task, const GenerationConfig& cfg) {
  return GenerateGeneral(articles, task, cfg, articles);
}

std::vector<Sample> GenerateGeneral(const std::vector<Article>& articles,
                                    Task task, const GenerationConfig& cfg,
                                    const std::vector<Article>& donor_articles) {
  cfg.Validate();
  const auto order = OrderById(
      articles.size(),
      [&](std::size_t i) -> const std::string& { return articles[i].id; });
  std::optional<DonorPool> donors;
  if (task == Task::kReplacement) donors.emplace(donor_articles);
  std::vector<std::vector<Sample>> per_article(articles.size());
  ParallelFor(articles.size(), cfg.workers, [&](std::size_t slot) {
    const Article& a = articles[order[slot]];
    Rng rng = StreamRng(cfg.seed, StreamKey(task, a.id, false));
    auto& out = per_article[slot];
    switch (task) {
      case Task::kInsertion:
        for (auto& s : GenInsertionGeneral(a, cfg, rng)) out.emplace_back(s);
        break;
      case Task::kDeletion:
        for (auto& s : GenDeletionGeneral(a, cfg, rng)) out.emplace_back(s);
        break;
      case Task::kReplacement:
        for (auto& s : GenReplacementGeneral(a, *donors, cfg, rng)) {
          out.emplace_back(s);
        }
        break;
    }
  });
  std::vector<Sample> all;
  for (auto& v : per_article) {
    std::move(v.begin(), v.end(), std::back_inserter(all));
  }
  return all;
}

// ---- dialogues ----

namespace {

struct DomainWindow {
  std::size_t start;
  std::size_t len;
};

std::optional<DomainWindow> PickDomainWindow(const Dialogue& d,
                                             const GenerationConfig& cfg,
                                             Rng& rng) {
  const std::size_t n = d.utterances.size();
  if (n < 3) return std::nullopt;
  const std::size_t len = std::min<std::size_t>(cfg.k, n);
  return DomainWindow{UniformIndex(rng, n - len + 1), len};
}

Provenance DomainProvenance(const Dialogue& d, const DomainWindow& w) {
  Provenance p;
  p.source_id = d.id;
  p.start = static_cast<int>(w.start);
  p.window = static_cast<int>(w.len);
  return p;
}

}  // namespace

std::optional<InsertionSample> GenInsertionDomain(const Dialogue& dialogue,
                                                  const GenerationConfig& cfg,
                                                  Rng& rng) {
  const auto w = PickDomainWindow(dialogue, cfg, rng);
  if (!w) return std::nullopt;
  const auto window = Window(dialogue.utterances, w->start, w->len);
  // u_2 goes into one of the len-1 intervals around u_3..u_len.
  const std::size_t pos = UniformIndex(rng, w->len - 1);
  InsertionSample s;
  s.variant = Variant::kDomain;
  s.anchor = window[0];
  s.tail.assign(window.begin() + 2, window.end());
  s.tail.insert(s.tail.begin() + static_cast<std::ptrdiff_t>(pos), window[1]);
  s.label = static_cast<int>(pos);
  s.provenance = DomainProvenance(dialogue, *w);
  if (WordCount(s) > static_cast<std::size_t>(cfg.max_words)) {
    return std::nullopt;
  }
  return s;
}

std::optional<DeletionSample> GenDeletionDomain(const Dialogue& dialogue,
                                                const GenerationConfig& cfg,
                                                Rng& rng) {
  const auto w = PickDomainWindow(dialogue, cfg, rng);
  if (!w) return std::nullopt;
  const auto window = Window(dialogue.utterances, w->start, w->len);
  const std::size_t d = UniformIndex(rng, w->len - 1);
  DeletionSample s;
  s.variant = Variant::kDomain;
  s.remaining = Without(window, d);
  s.deleted = window[d];
  s.label = static_cast<int>(d);
  s.provenance = DomainProvenance(dialogue, *w);
  if (WordCount(s) > static_cast<std::size_t>(cfg.max_words)) {
    return std::nullopt;
  }
  return s;
}

std::optional<ReplacementSample> GenReplacementDomain(
    const Dialogue& dialogue, const DonorPool& others,
    const GenerationConfig& cfg, Rng& rng) {
  const auto w = PickDomainWindow(dialogue, cfg, rng);
  if (!w) return std::nullopt;
  const std::size_t i = UniformIndex(rng, w->len);
  const auto donor = others.Sample(rng, dialogue.id);
  if (!donor) return std::nullopt;
  ReplacementSample s;
  s.variant = Variant::kDomain;
  s.utterances = Window(dialogue.utterances, w->start, w->len);
  s.utterances[i] = *donor->text;
  s.label = static_cast<int>(i);
  Provenance prov = DomainProvenance(dialogue, *w);
  prov.donor_id = *donor->source_id;
  prov.donor_sentence = donor->sentence;
  s.provenance = std::move(prov);
  if (WordCount(s) > static_cast<std::size_t>(cfg.max_words)) {
    return std::nullopt;
  }
  return s;
}

std::vector<Sample> GenerateDomain(const std::vector<Dialogue>& dialogues,
                                   Task task, const GenerationConfig& cfg) {
  cfg.Validate();
  const auto order = OrderById(
      dialogues.size(),
      [&](std::size_t i) -> const std::string& { return dialogues[i].id; });
  std::optional<DonorPool> donors;
  if (task == Task::kReplacement) donors.emplace(dialogues);
  std::vector<std::optional<Sample>> per_dialogue(dialogues.size());
  ParallelFor(dialogues.size(), cfg.workers, [&](std::size_t slot) {
    const Dialogue& d = dialogues[order[slot]];
    Rng rng = StreamRng(cfg.seed, StreamKey(task, d.id, true));
    switch (task) {
      case Task::kInsertion:
        if (auto s = GenInsertionDomain(d, cfg, rng)) per_dialogue[slot] = *s;
        break;
      case Task::kDeletion:
        if (auto s = GenDeletionDomain(d, cfg, rng)) per_dialogue[slot] = *s;
        break;
      case Task::kReplacement:
        if (auto s = GenReplacementDomain(d, *donors, cfg, rng)) {
          per_dialogue[slot] = *s;
        }
        break;
    }
  });
  std::vector<Sample> all;
  for (auto& s : per_dialogue) {
    if (s) all.push_back(std::move(*s));
  }
  return all;
}

// ---- validation ----

void SourceIndex::Add(const std::vector<Article>& articles) {
  for (const auto& a : articles) articles_[a.id] = &a;
}

void SourceIndex::Add(const std::vector<Dialogue>& dialogues) {
  for (const auto& d : dialogues) dialogues_[d.id] = &d;
}

const Article* SourceIndex::FindArticle(const std::string& id) const {
  auto it = articles_.find(id);
  return it == articles_.end() ? nullptr : it->second;
}

const Dialogue* SourceIndex::FindDialogue(const std::string& id) const {
  auto it = dialogues_.find(id);
  return it == dialogues_.end() ? nullptr : it->second;
}

namespace {

class Checker {
 public:
  Checker(const SourceIndex& sources, const GenerationConfig* cfg)
      : sources_(sources), cfg_(cfg) {}

  void Fail(std::string reason) {
    report_.ok = false;
    report_.reasons.push_back(std::move(reason));
  }

  // The utterance list the sample's window was cut from, or nullptr.
  const std::vector<std::string>* Sequence(Variant variant,
                                           const std::string& id,
                                           int paragraph) {
    if (variant == Variant::kDomain) {
      const Dialogue* d = sources_.FindDialogue(id);
      if (!d) Fail("unknown source dialogue '" + id + "'");
      return d ? &d->utterances : nullptr;
    }
    const Article* a = sources_.FindArticle(id);
    if (!a) {
      Fail("unknown source article '" + id + "'");
      return nullptr;
    }
    if (paragraph < 0 ||
        static_cast<std::size_t>(paragraph) >= a->paragraphs.size()) {
      Fail("paragraph " + std::to_string(paragraph) + " out of range");
      return nullptr;
    }
    return &a->paragraphs[paragraph];
  }

  std::optional<std::vector<std::string>> SourceWindow(Variant variant,
                                                       const Provenance& p) {
    const auto* seq = Sequence(variant, p.source_id, p.paragraph);
    if (!seq) return std::nullopt;
    if (p.start < 0 || p.window <= 0 ||
        static_cast<std::size_t>(p.start + p.window) > seq->size()) {
      Fail("window out of range");
      return std::nullopt;
    }
    if (variant == Variant::kGeneral && cfg_ &&
        seq->size() <= static_cast<std::size_t>(cfg_->k)) {
      Fail("source paragraph has no more than k sentences");
    }
    return Window(*seq, p.start, p.window);
  }

  void CheckWindowSize(Variant variant, int window) {
    if (window < 3) Fail("window shorter than 3 utterances");
    if (!cfg_) return;
    if (variant == Variant::kGeneral && window != cfg_->k) {
      Fail("window length " + std::to_string(window) + " != k");
    }
    if (variant == Variant::kDomain && window > cfg_->k) {
      Fail("window length " + std::to_string(window) + " > k");
    }
  }

  void CheckLabel(int label, const std::vector<std::size_t>& derived,
                  const char* what) {
    if (derived.empty()) {
      Fail(std::string("content mismatch: ") + what);
    } else if (std::find(derived.begin(), derived.end(),
                         static_cast<std::size_t>(label)) == derived.end()) {
      Fail("label mismatch: stored " + std::to_string(label) + ", derived " +
           std::to_string(derived.front()));
    }
  }

  void operator()(const InsertionSample& s) {
    const Provenance& p = *s.provenance;
    std::string target;
    std::vector<std::string> others;  // the non-target tail in source order
    if (s.variant == Variant::kGeneral) {
      if (s.tail.size() != 3) Fail("general insertion tail must have 3 items");
      const auto* pa = Sequence(s.variant, p.source_id, p.paragraph);
      const auto* pb = Sequence(s.variant, p.source_id, p.partner_paragraph);
      if (!pa || !pb) return;
      if (p.partner_paragraph <= p.paragraph) {
        Fail("order violation: B paragraph does not follow A paragraph");
      }
      if (p.start < 0 || static_cast<std::size_t>(p.start) + 1 >= pa->size() ||
          p.partner_start < 0 ||
          static_cast<std::size_t>(p.partner_start) + 1 >= pb->size()) {
        Fail("sentence pair out of range");
        return;
      }
      if (cfg_ && (pa->size() < static_cast<std::size_t>(
                                    cfg_->min_para_sentences_insertion) ||
                   pb->size() < static_cast<std::size_t>(
                                    cfg_->min_para_sentences_insertion))) {
        Fail("paragraph below insertion sentence minimum");
      }
      if (s.anchor != (*pa)[p.start]) Fail("anchor is not u_A1");
      target = (*pa)[p.start + 1];
      others = {(*pb)[p.partner_start], (*pb)[p.partner_start + 1]};
    } else {
      CheckWindowSize(s.variant, p.window);
      const auto w = SourceWindow(s.variant, p);
      if (!w) return;
      if (s.tail.size() + 1 != w->size()) Fail("tail length mismatch");
      if (s.anchor != (*w)[0]) Fail("anchor is not u_1");
      target = (*w)[1];
      others.assign(w->begin() + 2, w->end());
    }
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= s.tail.size()) {
      Fail("label out of range");
      return;
    }
    std::vector<std::size_t> derived;
    bool order_violation = false;
    for (std::size_t j = 0; j < s.tail.size(); ++j) {
      if (s.tail[j] != target) continue;
      auto rest = Without(s.tail, j);
      if (rest == others) {
        derived.push_back(j);
      } else if (std::is_permutation(rest.begin(), rest.end(), others.begin(),
                                     others.end())) {
        order_violation = true;
      }
    }
    if (derived.empty() && order_violation) {
      Fail("order violation: utterances out of source order");
      return;
    }
    CheckLabel(s.label, derived, "tail does not match source");
    if (s.variant == Variant::kGeneral && report_.ok) {
      const std::string pattern = SpeakerPattern(s);
      if (pattern != "AABB" && pattern != "ABAB" && pattern != "ABBA") {
        Fail("speaker pattern " + pattern + " not allowed");
      }
    }
  }

  void operator()(const DeletionSample& s) {
    const Provenance& p = *s.provenance;
    CheckWindowSize(s.variant, p.window);
    const auto w = SourceWindow(s.variant, p);
    if (!w) return;
    if (s.remaining.size() + 1 != w->size()) {
      Fail("remaining must hold window-1 utterances");
      return;
    }
    std::vector<std::size_t> derived;
    bool deleted_last = false;
    for (std::size_t d = 0; d < w->size(); ++d) {
      if ((*w)[d] != s.deleted || Without(*w, d) != s.remaining) continue;
      if (d + 1 == w->size()) {
        deleted_last = true;
      } else {
        derived.push_back(d);
      }
    }
    if (derived.empty() && deleted_last) {
      Fail("deleted utterance is the last of the window");
      return;
    }
    if (s.label < 0 || static_cast<std::size_t>(s.label) + 1 >= w->size()) {
      Fail("label out of range");
      return;
    }
    CheckLabel(s.label, derived, "remaining/deleted do not match source");
  }

  void operator()(const ReplacementSample& s) {
    const Provenance& p = *s.provenance;
    CheckWindowSize(s.variant, p.window);
    if (p.donor_id.empty()) {
      Fail("missing donor");
      return;
    }
    if (p.donor_id == p.source_id) Fail("donor is the source");
    const auto w = SourceWindow(s.variant, p);
    if (!w) return;
    const auto* donor_seq = Sequence(s.variant, p.donor_id, p.donor_paragraph);
    if (!donor_seq) return;
    if (p.donor_sentence < 0 ||
        static_cast<std::size_t>(p.donor_sentence) >= donor_seq->size()) {
      Fail("donor sentence out of range");
      return;
    }
    const std::string& intruder = (*donor_seq)[p.donor_sentence];
    if (s.utterances.size() != w->size()) {
      Fail("utterance count != window");
      return;
    }
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= w->size()) {
      Fail("label out of range");
      return;
    }
    std::vector<std::size_t> mismatches;
    for (std::size_t j = 0; j < w->size(); ++j) {
      if (s.utterances[j] != (*w)[j]) mismatches.push_back(j);
    }
    std::vector<std::size_t> derived;
    for (std::size_t j = 0; j < w->size(); ++j) {
      if (s.utterances[j] != intruder) continue;
      if (mismatches.empty() || (mismatches.size() == 1 && mismatches[0] == j)) {
        derived.push_back(j);
      }
    }
    CheckLabel(s.label, derived, "utterances do not match source + donor");
  }

  ValidationReport Finish(std::size_t words) {
    if (cfg_ && words > static_cast<std::size_t>(cfg_->max_words)) {
      Fail("word cap exceeded: " + std::to_string(words));
    }
    return std::move(report_);
  }

 private:
  const SourceIndex& sources_;
  const GenerationConfig* cfg_;
  ValidationReport report_;
};

}  // namespace

ValidationReport ValidateSample(const Sample& sample,
                                const SourceIndex& sources,
                                const GenerationConfig* cfg) {
  const bool has_provenance = std::visit(
      [](const auto& s) {
        return s.provenance.has_value() && !s.provenance->source_id.empty();
      },
      sample);
  if (!has_provenance) throw FormatError("sample has no provenance");
  Checker checker(sources, cfg);
  std::visit(checker, sample);
  return checker.Finish(WordCount(sample));
}

// ---- serialization ----

namespace {

const char* VariantName(Variant v) {
  return v == Variant::kGeneral ? "general" : "domain";
}

Variant ParseVariant(const std::string& s) {
  if (s == "general") return Variant::kGeneral;
  if (s == "domain") return Variant::kDomain;
  throw FormatError("unknown source '" + s + "'");
}

json ProvenanceToJson(const Provenance& p) {
  json j{{"source_id", p.source_id}, {"start", p.start}, {"window", p.window}};
  if (p.paragraph >= 0) j["paragraph"] = p.paragraph;
  if (p.partner_paragraph >= 0) j["partner_paragraph"] = p.partner_paragraph;
  if (p.partner_start >= 0) j["partner_start"] = p.partner_start;
  if (!p.donor_id.empty()) j["donor_id"] = p.donor_id;
  if (p.donor_paragraph >= 0) j["donor_paragraph"] = p.donor_paragraph;
  if (p.donor_sentence >= 0) j["donor_sentence"] = p.donor_sentence;
  return j;
}

Provenance ProvenanceFromJson(const json& j) {
  Provenance p;
  p.source_id = j.at("source_id").get<std::string>();
  p.start = j.at("start").get<int>();
  p.window = j.at("window").get<int>();
  p.paragraph = j.value("paragraph", -1);
  p.partner_paragraph = j.value("partner_paragraph", -1);
  p.partner_start = j.value("partner_start", -1);
  p.donor_id = j.value("donor_id", std::string());
  p.donor_paragraph = j.value("donor_paragraph", -1);
  p.donor_sentence = j.value("donor_sentence", -1);
  return p;
}

template <typename S>
void PutCommon(json& j, const S& s) {
  j["label"] = s.label;
  j["source"] = VariantName(s.variant);
  if (s.provenance) j["provenance"] = ProvenanceToJson(*s.provenance);
}

template <typename S>
void GetCommon(const json& j, S& s) {
  s.label = j.at("label").get<int>();
  s.variant = ParseVariant(j.value("source", std::string("general")));
  if (j.contains("provenance")) {
    s.provenance = ProvenanceFromJson(j.at("provenance"));
  }
}

}  // namespace

json SampleToJson(const Sample& sample) {
  struct Visitor {
    json operator()(const InsertionSample& s) const {
      json j{{"variant", "insertion"}, {"anchor", s.anchor}, {"tail", s.tail}};
      PutCommon(j, s);
      return j;
    }
    json operator()(const DeletionSample& s) const {
      json j{{"variant", "deletion"},
             {"remaining", s.remaining},
             {"deleted", s.deleted}};
      PutCommon(j, s);
      return j;
    }
    json operator()(const ReplacementSample& s) const {
      json j{{"variant", "replacement"}, {"utterances", s.utterances}};
      PutCommon(j, s);
      return j;
    }
  };
  return std::visit(Visitor{}, sample);
}

Sample SampleFromJson(const json& j) {
  const std::string variant = j.at("variant").get<std::string>();
  if (variant == "insertion") {
    InsertionSample s;
    s.anchor = j.at("anchor").get<std::string>();
    s.tail = j.at("tail").get<std::vector<std::string>>();
    GetCommon(j, s);
    return s;
  }
  if (variant == "deletion") {
    DeletionSample s;
    s.remaining = j.at("remaining").get<std::vector<std::string>>();
    s.deleted = j.at("deleted").get<std::string>();
    GetCommon(j, s);
    return s;
  }
  if (variant == "replacement") {
    ReplacementSample s;
    s.utterances = j.at("utterances").get<std::vector<std::string>>();
    GetCommon(j, s);
    return s;
  }
  throw FormatError("unknown variant tag '" + variant + "'");
}

void WriteSamples(const std::vector<Sample>& samples, std::ostream& out) {
  for (const auto& s : samples) out << SampleToJson(s).dump() << '\n';
}

void WriteSamples(const std::vector<Sample>& samples,
                  const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  WriteSamples(samples, out);
}

std::vector<Sample> ReadSamples(std::istream& in) {
  std::vector<Sample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (Trim(line).empty()) continue;
    try {
      out.push_back(SampleFromJson(json::parse(line)));
    } catch (const std::exception& e) {
      throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<Sample> ReadSamples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  return ReadSamples(in);
}

// ---- statistics ----

json StatsToJson(const GenerationStats& stats) {
  json tasks = json::object();
  for (Task t : corpus::kAllTasks) {
    const TaskCounts& c = stats.tasks[static_cast<int>(t)];
    tasks[corpus::TaskName(t)] = {{"train_articles", c.train_articles},
                                  {"valid_articles", c.valid_articles},
                                  {"train", c.train_samples},
                                  {"valid", c.valid_samples}};
  }
  return json{{"schema_version", 1}, {"tasks", tasks}};
}

std::string RenderStatsTable(const GenerationStats& stats) {
  auto articles_cell = [&](bool train) {
    std::vector<std::size_t> v;
    for (const auto& c : stats.tasks) {
      v.push_back(train ? c.train_articles : c.valid_articles);
    }
    if (v[0] == v[1] && v[1] == v[2]) return std::to_string(v[0]);
    return std::to_string(v[0]) + "/" + std::to_string(v[1]) + "/" +
           std::to_string(v[2]);
  };
  std::vector<std::array<std::string, 3>> rows = {
      {"Statistics", "Train", "Valid"},
      {"#articles/task", articles_cell(true), articles_cell(false)}};
  const char* names[] = {"Insertion", "Deletion", "Replacement"};
  for (int t = 0; t < 3; ++t) {
    rows.push_back({names[t], std::to_string(stats.tasks[t].train_samples),
                    std::to_string(stats.tasks[t].valid_samples)});
  }
  std::size_t w0 = 0, w1 = 0, w2 = 0;
  for (const auto& r : rows) {
    w0 = std::max(w0, r[0].size());
    w1 = std::max(w1, r[1].size());
    w2 = std::max(w2, r[2].size());
  }
  std::ostringstream os;
  const std::string rule = std::string(w0 + 1, '-') + "+" +
                           std::string(w1 + 2, '-') + "+" +
                           std::string(w2 + 1, '-') + "\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    os << std::left << std::setw(static_cast<int>(w0)) << rows[i][0] << " | "
       << std::right << std::setw(static_cast<int>(w1)) << rows[i][1] << " | "
       << std::setw(static_cast<int>(w2)) << rows[i][2] << "\n";
    if (i == 0) os << rule;
  }
  return os.str();
}

}  // namespace dopt::samplegen
