#include "astmask/ast_json.hpp"

#include <set>
#include <vector>

#include "json.hpp"

#include "astmask/error.hpp"

namespace astmask {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

AstNode node_from_json(const json& j, const std::string& path) {
  if (!j.is_object()) throw ValidationError(path + ": node is not an object");
  for (const auto& [key, _] : j.items()) {
    if (key != "type" && key != "role" && key != "token" && key != "children")
      throw ValidationError(path + ": unknown field \"" + key + "\"");
  }
  auto type = j.find("type");
  if (type == j.end()) throw ValidationError(path + ": missing \"type\"");
  if (!type->is_string() || type->get<std::string>().empty())
    throw ValidationError(path + ": \"type\" must be a non-empty string");

  AstNode node;
  node.node_type = type->get<std::string>();
  if (auto role = j.find("role"); role != j.end() && !role->is_null()) {
    if (!role->is_string()) throw ValidationError(path + ": \"role\" must be a string");
    node.role = role->get<std::string>();
  }
  if (auto tok = j.find("token"); tok != j.end() && !tok->is_null()) {
    if (!tok->is_string()) throw ValidationError(path + ": \"token\" must be a string");
    node.token_text = tok->get<std::string>();
  }
  if (auto kids = j.find("children"); kids != j.end()) {
    if (!kids->is_array()) throw ValidationError(path + ": \"children\" must be an array");
    for (std::size_t i = 0; i < kids->size(); ++i) {
      const auto& c = (*kids)[i];
      const std::string child_path = path + ".children[" + std::to_string(i) + "]";
      if (!c.is_object()) throw ValidationError(child_path + ": child is not an object");
      node.children.push_back(node_from_json(c, child_path));
    }
  }
  if (node.token_text && !node.children.empty())
    throw ValidationError(path + ": node has both \"token\" and children");
  return node;
}

ordered_json node_to_json(const AstNode& n) {
  ordered_json j;
  j["type"] = n.node_type;
  if (n.role) j["role"] = *n.role;
  if (n.token_text) j["token"] = *n.token_text;
  j["children"] = ordered_json::array();
  for (const auto& c : n.children) j["children"].push_back(node_to_json(c));
  return j;
}

}  // namespace

AstTree ingest_ast_json(std::string_view document, SourceLanguage lang) {
  // Track keys per open object so duplicates are rejected instead of
  // silently overwritten.
  std::vector<std::set<std::string>> open_objects;
  json::parser_callback_t cb = [&](int, json::parse_event_t event, json& parsed) {
    switch (event) {
      case json::parse_event_t::object_start: open_objects.emplace_back(); break;
      case json::parse_event_t::object_end: open_objects.pop_back(); break;
      case json::parse_event_t::key: {
        const auto key = parsed.get<std::string>();
        if (!open_objects.back().insert(key).second)
          throw ValidationError("duplicate field \"" + key + "\"");
        break;
      }
      default: break;
    }
    return true;
  };
  json doc;
  try {
    doc = json::parse(document.begin(), document.end(), cb);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed AST-JSON: ") + e.what());
  }
  return make_tree(node_from_json(doc, "$"), lang);
}

std::string emit_ast_json(const AstTree& tree) { return node_to_json(tree.root).dump(2); }

}  // namespace astmask
