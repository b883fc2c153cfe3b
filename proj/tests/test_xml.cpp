#include "doctest.h"

#include "xdfkit/errors.hpp"
#include "xdfkit/xml.hpp"

#include <functional>
#include <random>

using namespace xdfkit;

TEST_CASE("nested element text")
{
    const XmlNode root = parse_xml("<info><name>EEG</name></info>");
    CHECK(root.name == "info");
    CHECK(root.text.empty());
    REQUIRE(root.children.size() == 1);
    CHECK(root.children[0].name == "name");
    CHECK(root.children[0].text == "EEG");
}

TEST_CASE("empty element")
{
    const XmlNode root = parse_xml("<a></a>");
    CHECK(root == XmlNode{"a", "", {}});
    CHECK(parse_xml("<a/>") == root);
}

TEST_CASE("child order is preserved")
{
    const XmlNode root = parse_xml("<a><b>1</b><b>2</b></a>");
    REQUIRE(root.children.size() == 2);
    CHECK(root.children[0].text == "1");
    CHECK(root.children[1].text == "2");
}

TEST_CASE("declaration, comments, whitespace and entities")
{
    const XmlNode root = parse_xml(
        "<?xml version=\"1.0\"?>\n<!-- c -->\n<info>\n  <unit>&lt;&#181;V&gt; &amp; &#x20AC;</unit>\n"
        "  <!-- inner -->\n  <raw><![CDATA[<not a tag>]]></raw>\n</info>\n");
    REQUIRE(root.children.size() == 2);
    CHECK(root.children[0].text == "<\xC2\xB5V> & \xE2\x82\xAC");
    CHECK(root.children[1].text == "<not a tag>");
}

TEST_CASE("attributes become @attr children")
{
    const XmlNode root = parse_xml("<channel index=\"3\" kind='eeg'><label>Cz</label></channel>");
    REQUIRE(root.children.size() == 3);
    CHECK(root.children[0] == XmlNode{"@attr:index", "3", {}});
    CHECK(root.children[1] == XmlNode{"@attr:kind", "eeg", {}});
    CHECK(serialize_xml(root, false) == "<channel index=\"3\" kind=\"eeg\"><label>Cz</label></channel>");
}

TEST_CASE("mismatched tags report a byte position")
{
    try {
        parse_xml("<a><b></a>");
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("at byte") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_xml("<a>"), FormatError);
    CHECK_THROWS_AS(parse_xml(""), FormatError);
    CHECK_THROWS_AS(parse_xml("<a></a><b/>"), FormatError);
    CHECK_THROWS_AS(parse_xml("<a>&bogus;</a>"), FormatError);
}

TEST_CASE("nesting depth is limited")
{
    auto nested = [](int depth) {
        std::string doc;
        for (int i = 0; i < depth; ++i)
            doc += "<n>";
        for (int i = 0; i < depth; ++i)
            doc += "</n>";
        return doc;
    };
    CHECK(parse_xml(nested(256)).children.size() == 1);
    CHECK_THROWS_AS(parse_xml(nested(100000)), FormatError);
}

TEST_CASE("parse(serialize(tree)) is the identity on generated trees")
{
    std::mt19937 rng(7);
    const std::vector<std::string> texts{"", "1.0", "a & b", "<x>", "quote \"q\"", "µV"};
    auto pick = [&](int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); };
    std::function<void(XmlNode&, int)> grow = [&](XmlNode& node, int depth) {
        const int kids = depth > 4 ? 0 : pick(4);
        for (int i = 0; i < kids; ++i) {
            XmlNode child{"n" + std::to_string(pick(4)), texts[static_cast<std::size_t>(pick(6))], {}};
            if (pick(3) == 0)
                child.children.push_back({"@attr:k", texts[static_cast<std::size_t>(pick(6))], {}});
            grow(child, depth + 1);
            node.children.push_back(std::move(child));
        }
    };
    for (int trial = 0; trial < 200; ++trial) {
        XmlNode root{"root", {}, {}};
        grow(root, 0);
        CHECK(parse_xml(serialize_xml(root)) == root);
    }
}
