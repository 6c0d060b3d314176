#pragma once

// Chat-completions wire schema shared by the client and the mock server.

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "radlabel/error.hpp"
#include "radlabel/prompting.hpp"

namespace radlabel::wire {

inline constexpr const char* kChatPath = "/v1/chat/completions";

struct ChatMessage {
  std::string role;
  std::string content;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int max_tokens = 1;
  bool logprobs = false;
  int top_logprobs = 0;
  std::optional<std::uint64_t> seed;
};

inline std::vector<ChatMessage> messages_for(const PromptBundle& b) {
  std::vector<ChatMessage> m;
  if (!b.system_text.empty()) m.push_back({"system", b.system_text});
  m.push_back({"user", b.user_text});
  return m;
}

inline nlohmann::ordered_json to_json(const ChatRequest& r) {
  nlohmann::ordered_json j;
  j["model"] = r.model;
  j["messages"] = nlohmann::ordered_json::array();
  for (const auto& m : r.messages) j["messages"].push_back({{"role", m.role}, {"content", m.content}});
  j["temperature"] = r.temperature;
  j["max_tokens"] = r.max_tokens;
  if (r.logprobs) {
    j["logprobs"] = true;
    j["top_logprobs"] = r.top_logprobs;
  }
  if (r.seed) j["seed"] = *r.seed;
  return j;
}

// Throws ProtocolError describing the first schema violation.
inline ChatRequest parse_request(const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw ProtocolError(std::string("request body is not JSON: ") + e.what());
  }
  if (!j.is_object()) throw ProtocolError("request body is not an object");
  if (!j.contains("messages") || !j["messages"].is_array() || j["messages"].empty())
    throw ProtocolError("request lacks a non-empty 'messages' array");
  ChatRequest r;
  for (const auto& m : j["messages"]) {
    if (!m.is_object() || !m.contains("role") || !m["role"].is_string() || !m.contains("content") ||
        !m["content"].is_string())
      throw ProtocolError("each message needs string 'role' and 'content'");
    r.messages.push_back({m["role"].get<std::string>(), m["content"].get<std::string>()});
  }
  if (j.contains("model") && j["model"].is_string()) r.model = j["model"].get<std::string>();
  if (j.contains("temperature") && j["temperature"].is_number())
    r.temperature = j["temperature"].get<double>();
  if (j.contains("max_tokens") && j["max_tokens"].is_number_integer())
    r.max_tokens = j["max_tokens"].get<int>();
  if (j.contains("logprobs") && j["logprobs"].is_boolean()) r.logprobs = j["logprobs"].get<bool>();
  if (j.contains("top_logprobs") && j["top_logprobs"].is_number_integer())
    r.top_logprobs = j["top_logprobs"].get<int>();
  return r;
}

// choices[0].message.content
inline std::string response_text(const nlohmann::json& resp) {
  try {
    return resp.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("response lacks choices[0].message.content: ") + e.what());
  }
}

// choices[0].logprobs.content[0].top_logprobs
inline std::vector<TopLogprob> first_token_top_logprobs(const nlohmann::json& resp) {
  std::vector<TopLogprob> out;
  try {
    const auto& list = resp.at("choices").at(0).at("logprobs").at("content").at(0).at("top_logprobs");
    for (const auto& e : list)
      out.push_back({e.at("token").get<std::string>(), e.at("logprob").get<double>()});
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("response lacks choices[0].logprobs.content[0].top_logprobs: ") +
                        e.what());
  }
  return out;
}

}  // namespace radlabel::wire
