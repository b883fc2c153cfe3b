#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace xdfkit {

/// Element-only view of an XML document. Attributes become leading children
/// named "@attr:<name>" so that header metadata can be shown as one tree.
struct XmlNode {
    std::string name;
    std::string text;
    std::vector<XmlNode> children;

    /// First child with the given name, or nullptr.
    const XmlNode* find(std::string_view child_name) const;
    std::string child_text(std::string_view child_name, std::string_view fallback = {}) const;
    XmlNode& add(std::string child_name, std::string child_text = {});

    friend bool operator==(const XmlNode&, const XmlNode&) = default;
};

inline constexpr std::string_view xml_attribute_prefix = "@attr:";

/// Parses a document with a single root element. Whitespace-only text is
/// dropped and remaining text is trimmed. Nesting is limited to 256 levels.
/// Throws FormatError carrying the byte position of the first problem.
XmlNode parse_xml(std::string_view text);

/// Compact serialization (no indentation) with an optional XML declaration.
std::string serialize_xml(const XmlNode& root, bool declaration = true);

} // namespace xdfkit
