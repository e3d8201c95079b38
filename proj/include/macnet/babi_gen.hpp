#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace macnet::babigen {

// Offline generator for bAbI-format fixture files. It mirrors the published
// line format and sentence templates for a subset of tasks so the pipeline
// can be exercised without the downloaded corpus; point --data-dir at the
// real dataset for the full 20 tasks.
bool task_supported(int task_id);
const std::vector<int>& supported_tasks();  // {1, 2, 6, 11, 12, 13, 15}

// Standard bAbI text for one task: `<n> <sentence>` fact lines and
// `<n> <question>\t<answer>\t<supports>` question lines, line numbers
// resetting to 1 at story starts.
std::string generate_task_file(int task_id, int n_questions, uint64_t seed);

// Writes <root>/<set_name>/qa<t>_train.txt and qa<t>_test.txt.
void write_dataset(const std::string& root, const std::string& set_name,
                   const std::vector<int>& tasks, int train_questions, int test_questions,
                   uint64_t seed);

}  // namespace macnet::babigen
