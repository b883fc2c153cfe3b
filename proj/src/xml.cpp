#include "xdfkit/xml.hpp"

#include "xdfkit/errors.hpp"

#include <charconv>
#include <cstdint>

namespace xdfkit {

const XmlNode* XmlNode::find(std::string_view child_name) const
{
    for (const auto& child : children)
        if (child.name == child_name)
            return &child;
    return nullptr;
}

std::string XmlNode::child_text(std::string_view child_name, std::string_view fallback) const
{
    const XmlNode* child = find(child_name);
    return child ? child->text : std::string(fallback);
}

XmlNode& XmlNode::add(std::string child_name, std::string child_text)
{
    children.push_back(XmlNode{std::move(child_name), std::move(child_text), {}});
    return children.back();
}

namespace {

bool is_space(char c)
{
    return c == ' ' || c == '\t' || c == '\n' || c == '\r';
}

bool is_name_char(char c)
{
    return !is_space(c) && c != '/' && c != '>' && c != '=' && c != '<' && c != '"' && c != '\'';
}

std::string_view trim(std::string_view s)
{
    while (!s.empty() && is_space(s.front()))
        s.remove_prefix(1);
    while (!s.empty() && is_space(s.back()))
        s.remove_suffix(1);
    return s;
}

void append_utf8(std::string& out, std::uint32_t cp)
{
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

constexpr std::size_t max_xml_depth = 256;

class Parser {
public:
    explicit Parser(std::string_view text) : text_(text) {}

    XmlNode parse()
    {
        skip_misc();
        if (at_end() || peek() != '<')
            fail("expected root element");
        XmlNode root = parse_element();
        skip_misc();
        if (!at_end())
            fail("content after root element");
        return root;
    }

private:
    [[noreturn]] void fail(const std::string& what) const
    {
        throw FormatError("XML: " + what + " at byte " + std::to_string(pos_));
    }

    bool at_end() const { return pos_ >= text_.size(); }
    char peek() const { return text_[pos_]; }
    bool starts_with(std::string_view s) const { return text_.substr(pos_).starts_with(s); }

    void skip_space()
    {
        while (!at_end() && is_space(peek()))
            ++pos_;
    }

    void skip_past(std::string_view terminator)
    {
        const auto end = text_.find(terminator, pos_);
        if (end == std::string_view::npos)
            fail("unterminated markup");
        pos_ = end + terminator.size();
    }

    // Declarations, processing instructions, comments and DOCTYPE outside the root.
    void skip_misc()
    {
        for (;;) {
            skip_space();
            if (starts_with("<?"))
                skip_past("?>");
            else if (starts_with("<!--"))
                skip_past("-->");
            else if (starts_with("<!DOCTYPE"))
                skip_past(">");
            else
                return;
        }
    }

    std::string parse_name()
    {
        const auto start = pos_;
        while (!at_end() && is_name_char(peek()))
            ++pos_;
        if (pos_ == start)
            fail("expected name");
        return std::string(text_.substr(start, pos_ - start));
    }

    void decode_entity(std::string& out)
    {
        const auto end = text_.find(';', pos_);
        if (end == std::string_view::npos || end - pos_ > 12)
            fail("malformed entity");
        const auto entity = text_.substr(pos_ + 1, end - pos_ - 1);
        if (entity == "lt") out.push_back('<');
        else if (entity == "gt") out.push_back('>');
        else if (entity == "amp") out.push_back('&');
        else if (entity == "quot") out.push_back('"');
        else if (entity == "apos") out.push_back('\'');
        else if (entity.size() > 1 && entity[0] == '#') {
            std::uint32_t cp = 0;
            const bool hex = entity[1] == 'x' || entity[1] == 'X';
            const auto digits = entity.substr(hex ? 2 : 1);
            const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), cp, hex ? 16 : 10);
            if (ec != std::errc{} || ptr != digits.data() + digits.size() || digits.empty() || cp > 0x10FFFF)
                fail("bad character reference");
            append_utf8(out, cp);
        } else {
            fail("unknown entity");
        }
        pos_ = end + 1;
    }

    std::string parse_attribute_value()
    {
        if (at_end() || (peek() != '"' && peek() != '\''))
            fail("expected quoted attribute value");
        const char quote = peek();
        ++pos_;
        std::string value;
        while (!at_end() && peek() != quote) {
            if (peek() == '&')
                decode_entity(value);
            else if (peek() == '<')
                fail("'<' in attribute value");
            else
                value.push_back(text_[pos_++]);
        }
        if (at_end())
            fail("unterminated attribute value");
        ++pos_;
        return value;
    }

    // Reads "<name attrs...>" or "<name .../>"; returns true if self-closing.
    bool parse_start_tag(XmlNode& node)
    {
        ++pos_;  // '<'
        node.name = parse_name();
        for (;;) {
            skip_space();
            if (at_end())
                fail("unterminated start tag");
            if (peek() == '>') {
                ++pos_;
                return false;
            }
            if (starts_with("/>")) {
                pos_ += 2;
                return true;
            }
            std::string attr = parse_name();
            skip_space();
            if (at_end() || peek() != '=')
                fail("expected '=' after attribute name");
            ++pos_;
            skip_space();
            node.children.push_back(
                XmlNode{std::string(xml_attribute_prefix) + attr, parse_attribute_value(), {}});
        }
    }

    // Iterative, and depth-limited so that destroying the tree cannot overflow the stack either.
    XmlNode parse_element()
    {
        struct Frame {
            XmlNode node;
            std::string raw_text;
        };
        std::vector<Frame> stack;
        stack.emplace_back();
        if (parse_start_tag(stack.back().node))
            return std::move(stack.back().node);

        for (;;) {
            if (at_end())
                fail("unexpected end of document inside <" + stack.back().node.name + ">");
            Frame& top = stack.back();
            if (starts_with("</")) {
                pos_ += 2;
                const auto closing = parse_name();
                skip_space();
                if (at_end() || peek() != '>')
                    fail("malformed end tag");
                ++pos_;
                if (closing != top.node.name)
                    fail("mismatched end tag </" + closing + "> for <" + top.node.name + ">");
                top.node.text = std::string(trim(top.raw_text));
                XmlNode done = std::move(top.node);
                stack.pop_back();
                if (stack.empty())
                    return done;
                stack.back().node.children.push_back(std::move(done));
            } else if (starts_with("<!--")) {
                skip_past("-->");
            } else if (starts_with("<![CDATA[")) {
                pos_ += 9;
                const auto end = text_.find("]]>", pos_);
                if (end == std::string_view::npos)
                    fail("unterminated CDATA");
                top.raw_text.append(text_.substr(pos_, end - pos_));
                pos_ = end + 3;
            } else if (starts_with("<?")) {
                skip_past("?>");
            } else if (peek() == '<') {
                Frame child;
                if (parse_start_tag(child.node)) {
                    top.node.children.push_back(std::move(child.node));
                } else {
                    if (stack.size() >= max_xml_depth)
                        fail("nesting deeper than " + std::to_string(max_xml_depth) + " levels");
                    stack.push_back(std::move(child));
                }
            } else if (peek() == '&') {
                decode_entity(top.raw_text);
            } else {
                top.raw_text.push_back(text_[pos_++]);
            }
        }
    }

    std::string_view text_;
    std::size_t pos_ = 0;
};

void escape_into(std::string& out, std::string_view s, bool attribute)
{
    for (char c : s) {
        switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        case '"':
            if (attribute) out += "&quot;";
            else out.push_back(c);
            break;
        default: out.push_back(c);
        }
    }
}

void serialize_into(std::string& out, const XmlNode& node)
{
    out.push_back('<');
    out += node.name;
    bool has_elements = false;
    for (const auto& child : node.children) {
        if (child.name.starts_with(xml_attribute_prefix)) {
            out.push_back(' ');
            out += std::string_view(child.name).substr(xml_attribute_prefix.size());
            out += "=\"";
            escape_into(out, child.text, true);
            out.push_back('"');
        } else {
            has_elements = true;
        }
    }
    if (!has_elements && node.text.empty()) {
        out += "/>";
        return;
    }
    out.push_back('>');
    escape_into(out, node.text, false);
    for (const auto& child : node.children)
        if (!child.name.starts_with(xml_attribute_prefix))
            serialize_into(out, child);
    out += "</";
    out += node.name;
    out.push_back('>');
}

} // namespace

XmlNode parse_xml(std::string_view text)
{
    return Parser(text).parse();
}

std::string serialize_xml(const XmlNode& root, bool declaration)
{
    std::string out;
    if (declaration)
        out = "<?xml version=\"1.0\"?>";
    serialize_into(out, root);
    return out;
}

} // namespace xdfkit
