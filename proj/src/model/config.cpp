#include <array>
#include <charconv>

#include <fmt/format.h>

#include "plm/error.hpp"
#include "plm/model.hpp"

namespace plm {
namespace {

struct PresetRow {
    std::size_t hidden;
    std::size_t layers;
    std::size_t heads;
};

constexpr std::array<PresetRow, 10> kPresets = {{
    {512, 32, 8},
    {768, 12, 6},
    {768, 16, 16},
    {768, 16, 24},
    {1024, 12, 16},
    {1024, 12, 32},
    {2048, 12, 16},
    {2048, 24, 16},
    {2048, 24, 8},
    {3072, 24, 16},
}};

std::string preset_label(const PresetRow& row) {
    return fmt::format("hidden-{}-layer-{}-head-{}", row.hidden, row.layers, row.heads);
}

template <typename V>
V parse_number(std::string_view key, std::string_view text) {
    V value{};
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw ConfigError("config key '" + std::string(key) + "': '" + std::string(text) + "' is not a number");
    }
    return value;
}

std::size_t head_parameter_count(const ModelConfig& c, HeadKind kind) {
    const std::size_t h = c.hidden_size;
    const std::size_t w = c.head_width();
    const std::size_t in = kind == HeadKind::contact ? 2 * h : h;
    const std::size_t out = c.head_classes(kind);
    return in * w + w + w * out + out;
}

}  // namespace

std::string_view head_name(HeadKind kind) noexcept {
    switch (kind) {
        case HeadKind::ss3: return "ss3";
        case HeadKind::ss8: return "ss8";
        case HeadKind::fold: return "fold";
        case HeadKind::contact: return "contact";
        case HeadKind::regress: return "regress";
    }
    return "?";
}

HeadKind parse_head_kind(std::string_view name) {
    for (auto k : {HeadKind::ss3, HeadKind::ss8, HeadKind::fold, HeadKind::contact, HeadKind::regress}) {
        if (head_name(k) == name) return k;
    }
    throw ConfigError("unknown head '" + std::string(name) + "' (expected ss3, ss8, fold, contact or regress)");
}

HeadKind head_for_task(TaskKind task) noexcept {
    switch (task) {
        case TaskKind::ss3: return HeadKind::ss3;
        case TaskKind::ss8: return HeadKind::ss8;
        case TaskKind::remote_homology: return HeadKind::fold;
        case TaskKind::contact: return HeadKind::contact;
        case TaskKind::fluorescence:
        case TaskKind::stability: return HeadKind::regress;
    }
    return HeadKind::regress;
}

bool ModelConfig::has_head(HeadKind kind) const noexcept {
    for (auto h : heads) {
        if (h == kind) return true;
    }
    return false;
}

std::size_t ModelConfig::head_classes(HeadKind kind) const noexcept {
    switch (kind) {
        case HeadKind::ss3: return 3;
        case HeadKind::ss8: return 8;
        case HeadKind::fold: return static_cast<std::size_t>(fold_classes);
        case HeadKind::contact:
        case HeadKind::regress: return 1;
    }
    return 1;
}

void ModelConfig::validate() const {
    if (hidden_size == 0 || num_layers == 0 || num_heads == 0) {
        throw ConfigError("hidden_size, num_layers and num_heads must be positive");
    }
    if (hidden_size % num_heads != 0) {
        throw ConfigError(fmt::format("hidden_size {} is not divisible by num_heads {}", hidden_size, num_heads));
    }
    if (max_positions < 2) throw ConfigError("max_positions must be at least 2");
    if (vocab_size == 0) throw ConfigError("vocab_size must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0,1)");
    if (!(ln_eps > 0.0)) throw ConfigError("ln_eps must be positive");
    if (fold_classes < 2) throw ConfigError("fold_classes must be at least 2");
    for (std::size_t a = 0; a < heads.size(); ++a) {
        for (std::size_t b = a + 1; b < heads.size(); ++b) {
            if (heads[a] == heads[b]) throw ConfigError("head '" + std::string(head_name(heads[a])) + "' listed twice");
        }
    }
}

std::string config_text(const ModelConfig& c) {
    std::string heads;
    for (std::size_t i = 0; i < c.heads.size(); ++i) {
        if (i) heads += ',';
        heads += head_name(c.heads[i]);
    }
    return fmt::format(
        "hidden_size={}\nnum_layers={}\nnum_heads={}\nffn_size={}\nmax_positions={}\nvocab_size={}\n"
        "dropout={}\npre_ln={}\nln_eps={}\nhead_hidden={}\nfold_classes={}\nheads={}\n",
        c.hidden_size, c.num_layers, c.num_heads, c.ffn(), c.max_positions, c.vocab_size, c.dropout,
        c.pre_ln ? 1 : 0, c.ln_eps, c.head_width(), c.fold_classes, heads);
}

ModelConfig parse_config_text(std::string_view text) {
    ModelConfig c;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        const std::string_view line = text.substr(start, end - start);
        start = end + 1;
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string_view::npos) throw ConfigError("config line '" + std::string(line) + "' has no '='");
        const std::string_view key = line.substr(0, eq);
        const std::string_view value = line.substr(eq + 1);
        if (key == "hidden_size") {
            c.hidden_size = parse_number<std::size_t>(key, value);
        } else if (key == "num_layers") {
            c.num_layers = parse_number<std::size_t>(key, value);
        } else if (key == "num_heads") {
            c.num_heads = parse_number<std::size_t>(key, value);
        } else if (key == "ffn_size") {
            c.ffn_size = parse_number<std::size_t>(key, value);
        } else if (key == "max_positions") {
            c.max_positions = parse_number<std::size_t>(key, value);
        } else if (key == "vocab_size") {
            c.vocab_size = parse_number<std::size_t>(key, value);
        } else if (key == "dropout") {
            c.dropout = parse_number<double>(key, value);
        } else if (key == "pre_ln") {
            c.pre_ln = parse_number<int>(key, value) != 0;
        } else if (key == "ln_eps") {
            c.ln_eps = parse_number<double>(key, value);
        } else if (key == "head_hidden") {
            c.head_hidden = parse_number<std::size_t>(key, value);
        } else if (key == "fold_classes") {
            c.fold_classes = parse_number<int>(key, value);
        } else if (key == "heads") {
            c.heads.clear();
            std::size_t s = 0;
            while (s < value.size()) {
                std::size_t e = value.find(',', s);
                if (e == std::string_view::npos) e = value.size();
                c.heads.push_back(parse_head_kind(value.substr(s, e - s)));
                s = e + 1;
            }
        } else {
            throw ConfigError("unknown config key '" + std::string(key) + "'");
        }
    }
    c.validate();
    return c;
}

std::vector<std::string> preset_names() {
    std::vector<std::string> names;
    for (const auto& row : kPresets) names.push_back(preset_label(row));
    return names;
}

ModelConfig preset(std::string_view name) {
    for (const auto& row : kPresets) {
        if (preset_label(row) == name) {
            ModelConfig c;
            c.hidden_size = row.hidden;
            c.num_layers = row.layers;
            c.num_heads = row.heads;
            c.ffn_size = 4 * row.hidden;
            c.max_positions = 512;
            c.vocab_size = 30;
            return c;
        }
    }
    throw ConfigError("unknown preset '" + std::string(name) + "'");
}

std::size_t closed_form_parameter_count(const ModelConfig& c) {
    const std::size_t h = c.hidden_size;
    const std::size_t f = c.ffn();
    const std::size_t v = c.vocab_size;
    const std::size_t p = c.max_positions;
    std::size_t n = v * h + p * h;
    n += c.num_layers * (4 * h * h + 4 * h + 2 * h * f + f + h + 4 * h);
    if (c.pre_ln) n += 2 * h;
    n += v;
    for (auto kind : c.heads) n += head_parameter_count(c, kind);
    return n;
}

std::vector<std::pair<std::string, Shape>> layer_parameter_shapes(const ModelConfig& c, std::size_t layer) {
    const std::size_t h = c.hidden_size;
    const std::size_t f = c.ffn();
    const std::string p = fmt::format("layer.{}.", layer);
    return {
        {p + "ln1.gamma", {h}},         {p + "ln1.beta", {h}},
        {p + "attn.q.weight", {h, h}},  {p + "attn.q.bias", {h}},
        {p + "attn.k.weight", {h, h}},  {p + "attn.k.bias", {h}},
        {p + "attn.v.weight", {h, h}},  {p + "attn.v.bias", {h}},
        {p + "attn.out.weight", {h, h}}, {p + "attn.out.bias", {h}},
        {p + "ln2.gamma", {h}},         {p + "ln2.beta", {h}},
        {p + "ffn.in.weight", {h, f}},  {p + "ffn.in.bias", {f}},
        {p + "ffn.out.weight", {f, h}}, {p + "ffn.out.bias", {h}},
    };
}

std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& c) {
    const std::size_t h = c.hidden_size;
    std::vector<std::pair<std::string, Shape>> shapes = {
        {"embed.token", {c.vocab_size, h}},
        {"embed.position", {c.max_positions, h}},
    };
    for (std::size_t l = 0; l < c.num_layers; ++l) {
        auto layer = layer_parameter_shapes(c, l);
        shapes.insert(shapes.end(), layer.begin(), layer.end());
    }
    if (c.pre_ln) {
        shapes.push_back({"final_ln.gamma", {h}});
        shapes.push_back({"final_ln.beta", {h}});
    }
    shapes.push_back({"mlm.bias", {c.vocab_size}});
    for (auto kind : c.heads) {
        const std::string p = "head." + std::string(head_name(kind)) + ".";
        const std::size_t in = kind == HeadKind::contact ? 2 * h : h;
        const std::size_t w = c.head_width();
        const std::size_t out = c.head_classes(kind);
        shapes.push_back({p + "hidden.weight", {in, w}});
        shapes.push_back({p + "hidden.bias", {w}});
        shapes.push_back({p + "out.weight", {w, out}});
        shapes.push_back({p + "out.bias", {out}});
    }
    return shapes;
}

}  // namespace plm
