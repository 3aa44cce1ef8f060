#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "quire/common.hpp"

namespace quire {

class Workspace;

enum class MessageKind {
  Instruction,
  StatusUpdate,
  Escalation,
  UserChat,
  ReviewRequest,
  ReviewVerdict,
  FinalAnswer,
  Alert,
};

std::string_view to_string(MessageKind kind) noexcept;
MessageKind parse_message_kind(std::string_view name);

struct Message {
  std::string id;
  std::string sender;
  std::string recipient;
  MessageKind kind = MessageKind::StatusUpdate;
  std::string body;
  std::vector<std::string> attachments;
  std::optional<std::string> in_reply_to;
  std::uint64_t seq = 0;

  bool operator==(const Message&) const = default;
};

void to_json(Json& j, const Message& m);
void from_json(const Json& j, Message& m);

/// Parent links of the agent hierarchy. "user" is the implicit root.
class OrgChart {
 public:
  void add(const std::string& agent, const std::string& parent);
  bool contains(std::string_view agent) const;
  std::optional<std::string> parent(std::string_view agent) const;
  bool is_ancestor(std::string_view ancestor, std::string_view agent) const;
  bool adjacent(std::string_view a, std::string_view b) const;
  std::vector<std::string> children(std::string_view agent) const;
  const std::map<std::string, std::string, std::less<>>& parents() const noexcept { return parent_; }

 private:
  std::map<std::string, std::string, std::less<>> parent_;
};

/// In-process mailbox bus. Routing follows org-chart edges; escalations may
/// skip levels but only toward ancestors. Every accepted message is mirrored
/// to `bus/log.jsonl` in send order.
class Bus {
 public:
  static constexpr std::string_view kLogPath = "bus/log.jsonl";

  explicit Bus(Workspace* workspace = nullptr);

  void register_agent(const std::string& agent, const std::string& parent);
  bool is_registered(std::string_view agent) const;
  std::optional<std::string> parent_of(std::string_view agent) const;
  OrgChart chart() const;

  std::string send(Message draft);
  std::vector<Message> poll(std::string_view recipient, std::size_t max);
  std::size_t pending(std::string_view recipient) const;

  /// Sends an Escalation to the sender's parent. When the parent is the user
  /// the message is delivered as an Alert.
  std::string escalate(const std::string& sender, const std::string& body,
                       const std::vector<std::string>& attachments,
                       std::optional<std::string> in_reply_to = std::nullopt);

  std::uint64_t sent_count() const;
  std::uint64_t polled_count() const;

  Json state() const;
  void restore(const Json& state);

 private:
  void check_route(const Message& m) const;

  Workspace* workspace_;
  mutable std::mutex mu_;
  OrgChart chart_;
  std::map<std::string, std::deque<Message>, std::less<>> mailboxes_;
  std::map<std::pair<std::string, std::string>, std::uint64_t> seq_;
  std::uint64_t next_id_ = 1;
  std::uint64_t sent_ = 0;
  std::uint64_t polled_ = 0;
};

}  // namespace quire
