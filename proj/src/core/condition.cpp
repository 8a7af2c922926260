#include "gazeswap/condition.hpp"

#include "gazeswap/error.hpp"

namespace gazeswap {

std::string_view condition_name(ConditionId c) {
    switch (c) {
        case ConditionId::Dfl: return "dfl";
        case ConditionId::DflEm: return "dfl-em";
        case ConditionId::DflGaze: return "dfl-gaze";
        case ConditionId::DflGazeFinetune: return "dfl-gaze-ft";
        case ConditionId::DflEmGaze: return "dfl-em-gaze";
    }
    return "?";
}

std::string_view condition_label(ConditionId c) {
    switch (c) {
        case ConditionId::Dfl: return "DFL";
        case ConditionId::DflEm: return "DFL+em";
        case ConditionId::DflGaze: return "DFL+Gaze";
        case ConditionId::DflGazeFinetune: return "DFL+Gaze (finetuning)";
        case ConditionId::DflEmGaze: return "DFL+em+Gaze";
    }
    return "?";
}

std::string valid_condition_names() {
    std::string out;
    for (auto c : kAllConditions) {
        out += (out.empty() ? "" : ", ") + std::string(condition_name(c));
    }
    return out;
}

ConditionId parse_condition(std::string_view text) {
    static constexpr std::array<std::string_view, 5> enum_names{"DFL", "DFL_EM", "DFL_GAZE", "DFL_GAZE_FINETUNE",
                                                                "DFL_EM_GAZE"};
    for (size_t i = 0; i < kAllConditions.size(); ++i) {
        if (text == condition_name(kAllConditions[i]) || text == enum_names[i]) {
            return kAllConditions[i];
        }
    }
    throw ConfigError("unknown condition '" + std::string(text) + "'; valid names: " + valid_condition_names());
}

}  // namespace gazeswap
