#include "llmtraffic/prompts.hpp"

#include <array>
#include <fstream>
#include <random>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "llmtraffic/error.hpp"

namespace llmtraffic {

namespace {

constexpr std::array<const char*, 12> kNames = {"Maya", "Tomas", "Priya", "Jonah", "Aiko",  "Lena",
                                                "Omar", "Grace", "Felix", "Nadia", "Ravi", "Elsa"};
constexpr std::array<const char*, 8> kItems = {"apples", "pencils", "stickers", "marbles",
                                               "cookies", "books",   "stamps",   "shells"};

// Portable integer draw in [lo, hi]; std distributions differ across standard libraries.
class Draw {
 public:
  explicit Draw(std::seed_seq& seq) : rng_(seq) {}
  std::uint64_t in(std::uint64_t lo, std::uint64_t hi) { return lo + rng_() % (hi - lo + 1); }
  const char* name() { return kNames[in(0, kNames.size() - 1)]; }
  const char* item() { return kItems[in(0, kItems.size() - 1)]; }

 private:
  std::mt19937_64 rng_;
};

PromptRecord make_problem(std::int64_t id, std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id), 0x9e3779b9u};
  Draw d(seq);
  const char* who = d.name();
  const char* item = d.item();
  std::string q;
  std::string a;
  switch (d.in(0, 4)) {
    case 0: {
      const auto start = d.in(10, 90), bought = d.in(2, 40), given = d.in(1, 9);
      const auto total = start + bought - given;
      q = fmt::format("{} has {} {}. {} buys {} more at the market and then gives {} to a friend. "
                      "How many {} does {} have now?",
                      who, start, item, who, bought, given, item, who);
      a = fmt::format("After buying, {} has {} + {} = {} {}.\nAfter giving some away, {} has {} - {} = {}.\n#### {}",
                      who, start, bought, start + bought, item, who, start + bought, given, total, total);
      break;
    }
    case 1: {
      const auto boxes = d.in(3, 12), per = d.in(4, 24), price = d.in(1, 5);
      q = fmt::format("A shop packs {} into boxes of {}. {} buys {} boxes and pays ${} for each of the {}. "
                      "How much does {} spend in total?",
                      item, per, who, boxes, price, item, who);
      a = fmt::format("{} gets {} * {} = {} {}.\nThe cost is {} * {} = {} dollars.\n#### {}", who, boxes, per,
                      boxes * per, item, boxes * per, price, boxes * per * price, boxes * per * price);
      break;
    }
    case 2: {
      const auto speed = d.in(20, 70), hours = d.in(2, 6), rest = d.in(1, 3);
      const auto later = hours + rest;
      q = fmt::format("{} drives at {} miles per hour for {} hours, stops for lunch, and then drives {} more "
                      "hours at the same speed. How many miles does {} drive altogether?",
                      who, speed, hours, rest, who);
      a = fmt::format("{} drives for {} + {} = {} hours.\nThe distance is {} * {} = {} miles.\n#### {}", who, hours,
                      rest, later, later, speed, later * speed, later * speed);
      break;
    }
    case 3: {
      const auto half = d.in(5, 40), extra = d.in(1, 15);
      const auto first = 2 * half;
      const auto second = half + extra;
      q = fmt::format("On Monday {} collected {} {}. On Tuesday {} collected half as many as on Monday plus {} "
                      "more. How many {} did {} collect over the two days?",
                      who, first, item, who, extra, item, who);
      a = fmt::format("Half of {} is {}, so on Tuesday {} collected {} + {} = {}.\nIn total {} + {} = {}.\n#### {}",
                      first, half, who, half, extra, second, first, second, first + second, first + second);
      break;
    }
    default: {
      const auto friends = d.in(2, 8), each = d.in(3, 15), left = d.in(0, 9);
      const auto total = friends * each + left;
      q = fmt::format("{} shares a bag of {} {} equally among {} friends so that {} are left over. "
                      "How many {} does each friend get?",
                      who, total, item, friends, left, item);
      a = fmt::format("{} shares {} - {} = {} {}.\nEach friend gets {} / {} = {}.\n#### {}", who, total, left,
                      total - left, item, total - left, friends, each, each);
      break;
    }
  }
  return {id, std::move(q), std::move(a)};
}

}  // namespace

void PromptRecord::validate() const {
  if (question.empty()) throw Error(ErrorKind::InvalidArgument, fmt::format("prompt {} has an empty question", id));
}

std::vector<PromptRecord> load_prompts(const std::filesystem::path& path, std::size_t n) {
  if (n < 1) throw Error(ErrorKind::InsufficientRecords, "prompt count must be at least 1");
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::FileUnreadable, "cannot open " + path.string());
  std::vector<PromptRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (out.size() < n && std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorKind::MalformedRecord, fmt::format("{}:{}: {}", path.string(), line_no, ex.what()));
    }
    if (!j.is_object() || !j.contains("question") || !j["question"].is_string() ||
        j["question"].get<std::string>().empty()) {
      throw Error(ErrorKind::MalformedRecord,
                  fmt::format("{}:{}: record needs a non-empty \"question\" string", path.string(), line_no));
    }
    PromptRecord r{static_cast<std::int64_t>(out.size()), j["question"].get<std::string>(), std::nullopt};
    if (j.contains("answer") && j["answer"].is_string()) r.reference_answer = j["answer"].get<std::string>();
    out.push_back(std::move(r));
  }
  if (out.size() < n) {
    throw Error(ErrorKind::InsufficientRecords,
                fmt::format("{} holds {} records, {} requested", path.string(), out.size(), n));
  }
  return out;
}

std::vector<PromptRecord> synthetic_prompts(std::size_t n, std::uint64_t seed) {
  std::vector<PromptRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_problem(static_cast<std::int64_t>(i), seed));
  return out;
}

void write_prompts(const std::vector<PromptRecord>& prompts, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::FileUnreadable, "cannot write " + path.string());
  for (const auto& p : prompts) {
    nlohmann::json j = {{"question", p.question}};
    if (p.reference_answer) j["answer"] = *p.reference_answer;
    out << j.dump() << '\n';
  }
}

}  // namespace llmtraffic
