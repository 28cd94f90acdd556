#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "dataset.hpp"

namespace fixture {

inline valcon::QuestionItem binary_item(std::string topic = "t1", std::string question = "q1",
                                        std::size_t paraphrases = 3,
                                        valcon::Language lang = valcon::Language::eng) {
    valcon::QuestionItem item;
    item.topic_id = std::move(topic);
    item.question_id = std::move(question);
    item.language = lang;
    for (std::size_t r = 0; r < paraphrases; ++r) {
        item.paraphrases.push_back("Should " + item.topic_id + " policy " + item.question_id + " be adopted, wording " +
                                   std::to_string(r) + "?");
    }
    item.choices = {{"yes", valcon::Stance::supports}, {"no", valcon::Stance::opposes}};
    return item;
}

inline valcon::Corpus corpus_of(std::vector<valcon::QuestionItem> items) {
    valcon::Corpus c;
    for (const auto& item : items) c.topics[item.topic_id] = {"Topic " + item.topic_id, "about " + item.topic_id};
    c.items = std::move(items);
    c.provenance = {"fixture", "2024-01-01", "v1"};
    return c;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("valcon_test_" + std::to_string(rd()) + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace fixture
