#include "quire/bus.hpp"

#include <algorithm>

#include "quire/error.hpp"
#include "quire/workspace.hpp"

namespace quire {

namespace {

constexpr std::pair<MessageKind, std::string_view> kKindNames[] = {
    {MessageKind::Instruction, "Instruction"},   {MessageKind::StatusUpdate, "StatusUpdate"},
    {MessageKind::Escalation, "Escalation"},     {MessageKind::UserChat, "UserChat"},
    {MessageKind::ReviewRequest, "ReviewRequest"}, {MessageKind::ReviewVerdict, "ReviewVerdict"},
    {MessageKind::FinalAnswer, "FinalAnswer"},   {MessageKind::Alert, "Alert"},
};

}  // namespace

std::string_view to_string(MessageKind kind) noexcept {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "StatusUpdate";
}

MessageKind parse_message_kind(std::string_view name) {
  for (const auto& [k, n] : kKindNames) {
    if (n == name) return k;
  }
  throw Error(ErrorCode::UnparseableAction, "unknown message kind '" + std::string(name) + "'");
}

void to_json(Json& j, const Message& m) {
  j = Json{{"id", m.id},
           {"sender", m.sender},
           {"recipient", m.recipient},
           {"kind", to_string(m.kind)},
           {"body", m.body},
           {"attachments", m.attachments},
           {"in_reply_to", m.in_reply_to ? Json(*m.in_reply_to) : Json(nullptr)},
           {"seq", m.seq}};
}

void from_json(const Json& j, Message& m) {
  j.at("id").get_to(m.id);
  j.at("sender").get_to(m.sender);
  j.at("recipient").get_to(m.recipient);
  m.kind = parse_message_kind(j.at("kind").get<std::string>());
  j.at("body").get_to(m.body);
  m.attachments = j.value("attachments", std::vector<std::string>{});
  if (j.contains("in_reply_to") && !j["in_reply_to"].is_null()) {
    m.in_reply_to = j["in_reply_to"].get<std::string>();
  } else {
    m.in_reply_to.reset();
  }
  m.seq = j.value("seq", std::uint64_t{0});
}

void OrgChart::add(const std::string& agent, const std::string& parent) {
  if (agent.empty() || agent == kUser) throw Error(ErrorCode::InvalidSpec, "invalid agent id '" + agent + "'");
  if (contains(agent)) throw Error(ErrorCode::InvalidSpec, "agent '" + agent + "' already registered");
  if (parent != kUser && !contains(parent)) throw Error(ErrorCode::UnknownAgent, "parent '" + parent + "'");
  // A fresh leaf under an existing node cannot close a cycle.
  parent_.emplace(agent, parent);
}

bool OrgChart::contains(std::string_view agent) const { return parent_.find(agent) != parent_.end(); }

std::optional<std::string> OrgChart::parent(std::string_view agent) const {
  auto it = parent_.find(agent);
  if (it == parent_.end()) return std::nullopt;
  return it->second;
}

bool OrgChart::is_ancestor(std::string_view ancestor, std::string_view agent) const {
  auto cur = parent(agent);
  while (cur) {
    if (*cur == ancestor) return true;
    if (*cur == kUser) return false;
    cur = parent(*cur);
  }
  return false;
}

bool OrgChart::adjacent(std::string_view a, std::string_view b) const {
  auto pa = parent(a);
  if (pa && *pa == b) return true;
  auto pb = parent(b);
  return pb && *pb == a;
}

std::vector<std::string> OrgChart::children(std::string_view agent) const {
  std::vector<std::string> out;
  for (const auto& [child, p] : parent_) {
    if (p == agent) out.push_back(child);
  }
  return out;
}

Bus::Bus(Workspace* workspace) : workspace_(workspace) {}

void Bus::register_agent(const std::string& agent, const std::string& parent) {
  std::lock_guard lock(mu_);
  chart_.add(agent, parent);
  mailboxes_[agent];
}

bool Bus::is_registered(std::string_view agent) const {
  std::lock_guard lock(mu_);
  return agent == kUser || chart_.contains(agent);
}

std::optional<std::string> Bus::parent_of(std::string_view agent) const {
  std::lock_guard lock(mu_);
  return chart_.parent(agent);
}

OrgChart Bus::chart() const {
  std::lock_guard lock(mu_);
  return chart_;
}

void Bus::check_route(const Message& m) const {
  if (m.sender != kUser && !chart_.contains(m.sender)) throw Error(ErrorCode::UnknownSender, m.sender);
  if (m.recipient != kUser && !chart_.contains(m.recipient)) throw Error(ErrorCode::UnknownRecipient, m.recipient);
  if (m.sender == m.recipient) throw Error(ErrorCode::RoutingViolation, "self-addressed message from " + m.sender);
  if (m.kind == MessageKind::Alert && m.recipient != kUser) {
    throw Error(ErrorCode::RoutingViolation, "alerts are delivered to the user only");
  }
  if (chart_.adjacent(m.sender, m.recipient)) return;
  if (m.kind == MessageKind::Escalation && (m.recipient == kUser || chart_.is_ancestor(m.recipient, m.sender))) {
    return;
  }
  throw Error(ErrorCode::RoutingViolation, m.sender + " -> " + m.recipient + " (" +
                                               std::string(to_string(m.kind)) + ") is not an org-chart edge");
}

std::string Bus::send(Message draft) {
  std::lock_guard lock(mu_);
  check_route(draft);
  if (workspace_ != nullptr) {
    for (const auto& path : draft.attachments) {
      if (!workspace_->exists(path)) throw Error(ErrorCode::InvalidAttachment, "attachment not in workspace: " + path);
    }
  }
  draft.id = "m" + std::to_string(next_id_++);
  draft.seq = ++seq_[{draft.sender, draft.recipient}];
  if (workspace_ != nullptr) {
    workspace_->append_file(kLogPath, Json(draft).dump() + "\n", "bus");
  }
  ++sent_;
  std::string id = draft.id;
  mailboxes_[draft.recipient].push_back(std::move(draft));
  return id;
}

std::vector<Message> Bus::poll(std::string_view recipient, std::size_t max) {
  std::lock_guard lock(mu_);
  if (recipient != kUser && !chart_.contains(recipient)) throw Error(ErrorCode::UnknownRecipient, std::string(recipient));
  std::vector<Message> out;
  auto it = mailboxes_.find(recipient);
  if (it == mailboxes_.end()) return out;
  auto& box = it->second;
  while (!box.empty() && out.size() < max) {
    out.push_back(std::move(box.front()));
    box.pop_front();
  }
  polled_ += out.size();
  return out;
}

std::size_t Bus::pending(std::string_view recipient) const {
  std::lock_guard lock(mu_);
  auto it = mailboxes_.find(recipient);
  return it == mailboxes_.end() ? 0 : it->second.size();
}

std::string Bus::escalate(const std::string& sender, const std::string& body,
                          const std::vector<std::string>& attachments, std::optional<std::string> in_reply_to) {
  std::optional<std::string> parent;
  {
    std::lock_guard lock(mu_);
    parent = chart_.parent(sender);
  }
  if (!parent) throw Error(ErrorCode::UnknownSender, sender);
  Message m;
  m.sender = sender;
  m.recipient = *parent;
  m.kind = *parent == kUser ? MessageKind::Alert : MessageKind::Escalation;
  m.body = body;
  m.attachments = attachments;
  m.in_reply_to = std::move(in_reply_to);
  return send(std::move(m));
}

std::uint64_t Bus::sent_count() const {
  std::lock_guard lock(mu_);
  return sent_;
}

std::uint64_t Bus::polled_count() const {
  std::lock_guard lock(mu_);
  return polled_;
}

Json Bus::state() const {
  std::lock_guard lock(mu_);
  Json agents = Json::array();
  // Insertion order is not kept by the map; parents are re-registered first on restore.
  for (const auto& [agent, parent] : chart_.parents()) agents.push_back({{"agent", agent}, {"parent", parent}});
  Json boxes = Json::object();
  for (const auto& [agent, box] : mailboxes_) {
    if (box.empty()) continue;
    boxes[agent] = Json(std::vector<Message>(box.begin(), box.end()));
  }
  Json seqs = Json::array();
  for (const auto& [pair, n] : seq_) seqs.push_back({pair.first, pair.second, n});
  return Json{{"agents", agents}, {"mailboxes", boxes}, {"seq", seqs},
              {"next_id", next_id_}, {"sent", sent_}, {"polled", polled_}};
}

void Bus::restore(const Json& state) {
  std::lock_guard lock(mu_);
  chart_ = OrgChart{};
  mailboxes_.clear();
  seq_.clear();
  std::vector<std::pair<std::string, std::string>> pending;
  for (const auto& a : state.at("agents")) pending.emplace_back(a.at("agent"), a.at("parent"));
  while (!pending.empty()) {
    auto before = pending.size();
    for (auto it = pending.begin(); it != pending.end();) {
      if (it->second == kUser || chart_.contains(it->second)) {
        chart_.add(it->first, it->second);
        mailboxes_[it->first];
        it = pending.erase(it);
      } else {
        ++it;
      }
    }
    if (pending.size() == before) throw Error(ErrorCode::Persistence, "org chart has orphaned agents");
  }
  for (const auto& [agent, msgs] : state.at("mailboxes").items()) {
    auto& box = mailboxes_[agent];
    for (const auto& m : msgs) box.push_back(m.get<Message>());
  }
  for (const auto& s : state.at("seq")) seq_[{s.at(0).get<std::string>(), s.at(1).get<std::string>()}] = s.at(2);
  next_id_ = state.at("next_id");
  sent_ = state.at("sent");
  polled_ = state.at("polled");
}

}  // namespace quire
