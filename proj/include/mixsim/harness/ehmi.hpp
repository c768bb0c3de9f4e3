#pragma once

#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "mixsim/maneuver.hpp"

namespace mixsim {

inline constexpr std::size_t kEhmiBudget = 120;  // characters

enum class EhmiTrigger { Decision, Clarification, Reply };

inline std::string_view to_string(EhmiTrigger t) {
  switch (t) {
    case EhmiTrigger::Decision: return "decision";
    case EhmiTrigger::Clarification: return "clarification";
    case EhmiTrigger::Reply: return "reply";
  }
  return "decision";
}

struct EhmiMessage {
  double t{0.0};
  std::string source;
  std::string text;
  EhmiTrigger trigger{EhmiTrigger::Decision};
};

inline nlohmann::json to_json(const EhmiMessage& m) {
  return {{"t", m.t}, {"source", m.source}, {"text", m.text}, {"trigger", to_string(m.trigger)}};
}

inline std::string_view ehmi_template(Maneuver m) {
  switch (m) {
    case Maneuver::StraightAccel: return "I am speeding up to pass first; please wait.";
    case Maneuver::StraightDecel: return "I am slowing down; please go ahead.";
    case Maneuver::StraightConst: return "I am keeping my speed through the intersection.";
    case Maneuver::LeftTurn: return "I am turning left; please watch for me.";
    case Maneuver::RightTurn: return "I am turning right.";
  }
  return "I am keeping my speed through the intersection.";
}

namespace detail {
// Counts UTF-8 code points.
inline std::size_t utf8_length(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s)
    if ((c & 0xC0) != 0x80) ++n;
  return n;
}
}  // namespace detail

/// Cuts to at most `budget` characters at a word boundary and appends "…".
inline std::string truncate_words(std::string_view text, std::size_t budget = kEhmiBudget) {
  if (detail::utf8_length(text) <= budget) return std::string(text);
  // leave room for the ellipsis; byte prefix of budget-1 code points
  std::size_t bytes = 0, cps = 0;
  while (bytes < text.size() && cps < budget - 1) {
    ++bytes;
    while (bytes < text.size() && (static_cast<unsigned char>(text[bytes]) & 0xC0) == 0x80) ++bytes;
    ++cps;
  }
  std::string_view head = text.substr(0, bytes);
  const bool cut_mid_word = bytes < text.size() && text[bytes] != ' ';
  if (cut_mid_word) {
    const auto sp = head.find_last_of(' ');
    if (sp != std::string_view::npos && sp > 0) head = head.substr(0, sp);
  }
  while (!head.empty() && (head.back() == ' ' || head.back() == ',' || head.back() == ';')) head.remove_suffix(1);
  return std::string(head) + "\xE2\x80\xA6";
}

struct EhmiContext {
  double t{0.0};
  std::string source;
  std::optional<std::string> clarification;  // confirmatory question, if any
};

/// A pending clarification wins over the decision text. Reasoner text is
/// used when present; over-budget text is truncated, empty text falls
/// back to the template.
inline EhmiMessage ehmi_render(Maneuver decision, const std::optional<std::string>& reasoner_text,
                               const EhmiContext& ctx = {}) {
  EhmiMessage msg;
  msg.t = ctx.t;
  msg.source = ctx.source;
  if (ctx.clarification && !ctx.clarification->empty()) {
    msg.trigger = EhmiTrigger::Clarification;
    msg.text = truncate_words(*ctx.clarification);
    return msg;
  }
  msg.trigger = EhmiTrigger::Decision;
  if (reasoner_text && !reasoner_text->empty())
    msg.text = truncate_words(*reasoner_text);
  else
    msg.text = std::string(ehmi_template(decision));
  return msg;
}

}  // namespace mixsim
