#pragma once

// Benchmark prompts in GSM8K-style JSON lines: {"question": ..., "answer": ...}.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace llmtraffic {

struct PromptRecord {
  std::int64_t id = 0;
  std::string question;
  std::optional<std::string> reference_answer;

  void validate() const;  // throws InvalidArgument on an empty question

  friend bool operator==(const PromptRecord&, const PromptRecord&) = default;
};

// First n records in file order, ids 0..n-1. Blank lines are skipped.
// Throws FileUnreadable, MalformedRecord (with line number), InsufficientRecords.
std::vector<PromptRecord> load_prompts(const std::filesystem::path& path, std::size_t n);

// Deterministic grade-school arithmetic word problems with worked answers
// ending in "#### <n>", for offline runs without the benchmark file.
std::vector<PromptRecord> synthetic_prompts(std::size_t n, std::uint64_t seed);

void write_prompts(const std::vector<PromptRecord>& prompts, const std::filesystem::path& path);

}  // namespace llmtraffic
