#include "dopt/corpus.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <unordered_map>

#include "dopt/common.h"

namespace dopt::corpus {
namespace {

using nlohmann::json;

bool IsSpace(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

bool IsTerminator(char c) { return c == '.' || c == '!' || c == '?'; }

struct Heading {
  int level = 0;
  std::string name;
};

std::optional<Heading> ParseHeading(std::string_view line) {
  line = Trim(line);
  if (line.empty()) return std::nullopt;
  Heading h;
  if (line.front() == '#') {
    while (static_cast<std::size_t>(h.level) < line.size() &&
           line[h.level] == '#') {
      ++h.level;
    }
    h.name = std::string(Trim(line.substr(h.level)));
  } else if (line.size() >= 2 && line.front() == '=' && line.back() == '=') {
    std::size_t b = 0, e = line.size();
    while (b < e && line[b] == '=') ++b;
    while (e > b && line[e - 1] == '=') --e;
    h.level = static_cast<int>(b);
    h.name = std::string(Trim(line.substr(b, e - b)));
  } else {
    return std::nullopt;
  }
  if (h.name.empty()) return std::nullopt;
  return h;
}

std::string ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string AutoId(std::size_t index) {
  std::string digits = std::to_string(index);
  if (digits.size() < 6) digits.insert(0, 6 - digits.size(), '0');
  return "doc-" + digits;
}

class RawArticleBuilder {
 public:
  RawArticleBuilder(const SplitConfig& config, std::string id)
      : config_(config) {
    article_.id = std::move(id);
  }

  void AddLine(std::string_view line) {
    if (Trim(line).empty()) {
      FlushParagraph();
    } else {
      lines_.emplace_back(line);
    }
  }

  Article Finish() {
    FlushParagraph();
    return std::move(article_);
  }

 private:
  bool Blacklisted(const std::string& section) const {
    const std::string lowered = ToLowerAscii(section);
    return std::any_of(config_.heading_blacklist.begin(),
                       config_.heading_blacklist.end(),
                       [&](const std::string& b) {
                         return ToLowerAscii(Trim(b)) == lowered;
                       });
  }

  void FlushParagraph() {
    if (lines_.empty()) return;
    std::size_t first_body = 0;
    if (auto heading = ParseHeading(lines_[0])) {
      first_body = 1;
      if (!seen_paragraph_ && heading->level == 1 && article_.title.empty()) {
        article_.title = heading->name;
      } else {
        section_ = heading->name;
      }
    }
    seen_paragraph_ = true;
    std::string body;
    for (std::size_t i = first_body; i < lines_.size(); ++i) {
      if (!body.empty()) body.push_back(' ');
      body += Trim(lines_[i]);
    }
    lines_.clear();
    if (body.empty() || Blacklisted(section_)) return;
    auto sentences = SplitSentences(body, config_);
    if (!sentences.empty()) article_.paragraphs.push_back(std::move(sentences));
  }

  const SplitConfig& config_;
  Article article_;
  std::vector<std::string> lines_;
  std::string section_;
  bool seen_paragraph_ = false;
};

}  // namespace

const char* TaskName(Task task) {
  switch (task) {
    case Task::kInsertion:
      return "insertion";
    case Task::kDeletion:
      return "deletion";
    case Task::kReplacement:
      return "replacement";
  }
  return "unknown";
}

Task ParseTask(const std::string& name) {
  for (Task t : kAllTasks) {
    if (name == TaskName(t)) return t;
  }
  throw ConfigError("unknown task '" + name + "'");
}

json ArticleToJson(const Article& article) {
  return json{{"id", article.id},
              {"title", article.title},
              {"paragraphs", article.paragraphs}};
}

Article ArticleFromJson(const json& j) {
  if (!j.is_object()) throw FormatError("article must be a JSON object");
  Article a;
  a.id = j.at("id").get<std::string>();
  if (a.id.empty()) throw FormatError("article id must be non-empty");
  a.title = j.value("title", std::string());
  for (const auto& para : j.at("paragraphs")) {
    Paragraph p;
    for (const auto& s : para) {
      std::string sentence(Trim(s.get<std::string>()));
      if (sentence.empty()) {
        throw FormatError("article '" + a.id + "' has an empty sentence");
      }
      p.push_back(std::move(sentence));
    }
    a.paragraphs.push_back(std::move(p));
  }
  return a;
}

std::vector<Article> IngestJsonl(std::istream& in) {
  std::vector<Article> articles;
  std::unordered_map<std::string, std::size_t> first_line;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (Trim(line).empty()) continue;
    Article article;
    try {
      article = ArticleFromJson(json::parse(line));
    } catch (const std::exception& e) {
      throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
    }
    auto [it, inserted] = first_line.emplace(article.id, line_no);
    if (!inserted) {
      throw FormatError("duplicate article id '" + article.id + "' at lines " +
                        std::to_string(it->second) + " and " +
                        std::to_string(line_no));
    }
    articles.push_back(std::move(article));
  }
  return articles;
}

std::vector<Article> IngestJsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  return IngestJsonl(in);
}

void WriteArticlesJsonl(const std::vector<Article>& articles,
                        std::ostream& out) {
  for (const auto& a : articles) out << ArticleToJson(a).dump() << '\n';
}

void ValidateUtf8(std::string_view text) {
  const auto* s = reinterpret_cast<const unsigned char*>(text.data());
  const std::size_t n = text.size();
  std::size_t i = 0;
  while (i < n) {
    const unsigned char c = s[i];
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      throw FormatError("invalid UTF-8 at byte offset " + std::to_string(i));
    }
    if (i + len > n) {
      throw FormatError("truncated UTF-8 at byte offset " + std::to_string(i));
    }
    for (std::size_t k = 1; k < len; ++k) {
      if ((s[i + k] & 0xC0) != 0x80) {
        throw FormatError("invalid UTF-8 at byte offset " + std::to_string(i));
      }
      cp = (cp << 6) | (s[i + k] & 0x3F);
    }
    static constexpr std::uint32_t kMin[] = {0, 0, 0x80, 0x800, 0x10000};
    if (cp < kMin[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
      throw FormatError("invalid UTF-8 at byte offset " + std::to_string(i));
    }
    i += len;
  }
}

std::vector<Article> ParseRawText(std::string_view text,
                                  const SplitConfig& config) {
  ValidateUtf8(text);
  if (config.article_delimiter.empty()) {
    throw ConfigError("article_delimiter must be non-empty");
  }
  std::vector<Article> articles;
  std::set<std::string> ids;
  auto finish = [&](RawArticleBuilder& b) {
    Article a = b.Finish();
    if (!ids.insert(a.id).second) {
      throw FormatError("duplicate article id '" + a.id + "'");
    }
    articles.push_back(std::move(a));
  };

  std::optional<RawArticleBuilder> current;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.substr(0, config.article_delimiter.size()) ==
        config.article_delimiter) {
      if (current) finish(*current);
      std::string id(Trim(line.substr(config.article_delimiter.size())));
      if (id.empty()) id = AutoId(articles.size() + 1);
      current.emplace(config, std::move(id));
    } else {
      if (!current) {
        if (Trim(line).empty()) {
          pos = end + 1;
          continue;
        }
        current.emplace(config, AutoId(articles.size() + 1));
      }
      current->AddLine(line);
    }
    pos = end + 1;
  }
  if (current) finish(*current);
  return articles;
}

std::vector<Article> IngestRawText(const std::filesystem::path& path,
                                   const SplitConfig& config) {
  return ParseRawText(ReadFile(path), config);
}

std::vector<std::string> SplitSentences(std::string_view paragraph_text,
                                        const SplitConfig& config) {
  const std::string text = CollapseWhitespace(paragraph_text);
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (!IsTerminator(text[i])) continue;
    if (i + 1 >= text.size() || !IsSpace(text[i + 1])) continue;
    std::size_t word_begin = text.rfind(' ', i);
    word_begin = word_begin == std::string::npos ? 0 : word_begin + 1;
    if (word_begin < start) word_begin = start;
    const std::string_view word(text.data() + word_begin, i + 1 - word_begin);
    if (std::find(config.abbreviations.begin(), config.abbreviations.end(),
                  word) != config.abbreviations.end()) {
      continue;
    }
    out.emplace_back(text.substr(start, i + 1 - start));
    start = i + 2;
  }
  if (start < text.size()) out.emplace_back(text.substr(start));
  return out;
}

CorpusPartition PartitionArticles(const std::vector<std::string>& ids,
                                  std::uint64_t seed) {
  if (ids.empty()) throw ConfigError("cannot partition an empty id list");
  std::set<std::string> unique(ids.begin(), ids.end());
  if (unique.size() != ids.size()) {
    throw ConfigError("article ids must be unique to partition");
  }
  std::vector<std::string> order = ids;
  Rng rng(SplitMix64(seed));
  Shuffle(order, rng);
  CorpusPartition p;
  p.seed = seed;
  for (std::size_t i = 0; i < order.size(); ++i) {
    p.sets[i % 3].push_back(std::move(order[i]));
  }
  return p;
}

std::pair<std::vector<std::string>, std::vector<std::string>> SplitTrainValid(
    const std::vector<std::string>& ids, double valid_fraction) {
  if (valid_fraction < 0.0 || valid_fraction >= 1.0) {
    throw ConfigError("valid_fraction must be in [0, 1)");
  }
  const std::size_t n = ids.size();
  std::size_t n_valid = static_cast<std::size_t>(
      std::llround(valid_fraction * static_cast<double>(n)));
  if (valid_fraction > 0.0 && n >= 2) {
    n_valid = std::clamp<std::size_t>(n_valid, 1, n - 1);
  } else if (n < 2) {
    n_valid = 0;
  }
  std::vector<std::string> train(ids.begin(), ids.end() - n_valid);
  std::vector<std::string> valid(ids.end() - n_valid, ids.end());
  return {std::move(train), std::move(valid)};
}

json PartitionToJson(const CorpusPartition& partition) {
  json sets = json::object();
  for (Task t : kAllTasks) sets[TaskName(t)] = partition.set(t);
  return json{{"schema_version", 1}, {"seed", partition.seed}, {"sets", sets}};
}

CorpusPartition PartitionFromJson(const json& j) {
  CorpusPartition p;
  try {
    p.seed = j.at("seed").get<std::uint64_t>();
    for (Task t : kAllTasks) {
      p.sets[static_cast<int>(t)] =
          j.at("sets").at(TaskName(t)).get<std::vector<std::string>>();
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("partition: ") + e.what());
  }
  return p;
}

CorpusStats ComputeCorpusStats(const std::vector<Article>& articles) {
  CorpusStats stats;
  stats.articles = articles.size();
  for (const auto& a : articles) {
    stats.paragraphs += a.paragraphs.size();
    for (const auto& p : a.paragraphs) {
      stats.sentences += p.size();
      ++stats.paragraph_histogram[p.size()];
    }
  }
  return stats;
}

json CorpusStatsToJson(const CorpusStats& stats) {
  json hist = json::object();
  for (const auto& [size, count] : stats.paragraph_histogram) {
    hist[std::to_string(size)] = count;
  }
  return json{{"articles", stats.articles},
              {"paragraphs", stats.paragraphs},
              {"sentences", stats.sentences},
              {"sentences_per_paragraph", hist}};
}

}  // namespace dopt::corpus
