#pragma once

#include <array>
#include <string>
#include <string_view>

namespace gazeswap {

/// The five training conditions compared by the experiment.
enum class ConditionId { Dfl, DflEm, DflGaze, DflGazeFinetune, DflEmGaze };

inline constexpr std::array<ConditionId, 5> kAllConditions{ConditionId::Dfl, ConditionId::DflEm,
                                                           ConditionId::DflGaze, ConditionId::DflGazeFinetune,
                                                           ConditionId::DflEmGaze};

/// Command-line / file name: dfl, dfl-em, dfl-gaze, dfl-gaze-ft, dfl-em-gaze.
std::string_view condition_name(ConditionId c);
/// Display label used in reports and plots, e.g. "DFL+Gaze (finetuning)".
std::string_view condition_label(ConditionId c);
/// Accepts the names above or the enum spellings (DFL_GAZE, ...). Throws ConfigError
/// listing the valid names otherwise.
ConditionId parse_condition(std::string_view text);
std::string valid_condition_names();

inline bool uses_em(ConditionId c) { return c == ConditionId::DflEm || c == ConditionId::DflEmGaze; }
inline bool uses_gaze(ConditionId c) {
    return c == ConditionId::DflGaze || c == ConditionId::DflGazeFinetune || c == ConditionId::DflEmGaze;
}

/// Training phase: pretraining on the identity pool, then training on the pair.
enum class Phase { Pretrain, Pair };

/// Whether the gaze term is active in a phase. The finetuning condition enables it
/// only on the pair phase.
inline bool gaze_active(ConditionId c, Phase p) {
    if (c == ConditionId::DflGazeFinetune) {
        return p == Phase::Pair;
    }
    return uses_gaze(c);
}

}  // namespace gazeswap
