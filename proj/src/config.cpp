#include "damformer/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace damformer {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// shortest decimal form that parses back to the same double
std::string fmt_double(double v) {
    char buf[40];
    for (int prec = 6; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) return buf;
    }
    return buf;
}

double parse_double(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const double out = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0')
        throw ConfigError("config: bad number for " + key + ": '" + v + "'");
    return out;
}

int64_t parse_int(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const long long out = std::strtoll(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0')
        throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
    return out;
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const unsigned long long out = std::strtoull(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0')
        throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config: bad boolean for " + key + ": '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v, size_t want) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ','))
        out.push_back(static_cast<int>(parse_int(key, trim(item))));
    if (out.size() != want)
        throw ConfigError("config: " + key + " needs " + std::to_string(want) + " values, got " +
                          std::to_string(out.size()));
    return out;
}

std::string fmt_int_list(const std::vector<int>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

}  // namespace

void RunConfig::validate() const {
    model.validate();
    loss.validate();
    opt.validate();
    if (threads < 1) throw ConfigError("config: threads must be >= 1");
    if (data_source != "synth" && data_source != "dir")
        throw ConfigError("config: data.source must be synth or dir, got '" + data_source + "'");
    if (data_source == "dir" && data_dir.empty())
        throw ConfigError("config: data.dir is required when data.source = dir");
    if (data_source == "synth") synth.validate();
    if (train_count < 0 || eval_count < 0) throw ConfigError("config: sample counts must be >= 0");
}

RunConfig RunConfig::parse(const std::string& text) {
    RunConfig c;
    using Setter = std::function<void(const std::string&, const std::string&)>;
    const std::map<std::string, Setter> keys = {
        {"seed", [&](const std::string& k, const std::string& v) { c.seed = parse_u64(k, v); }},
        {"threads",
         [&](const std::string& k, const std::string& v) { c.threads = static_cast<int>(parse_int(k, v)); }},
        {"out", [&](const std::string&, const std::string& v) { c.out_dir = v; }},
        {"debug.check_finite",
         [&](const std::string& k, const std::string& v) { c.check_finite = parse_bool(k, v); }},

        {"enc.blocks",
         [&](const std::string& k, const std::string& v) { c.model.enc.blocks = parse_int_list(k, v, 4); }},
        {"enc.channels",
         [&](const std::string& k, const std::string& v) { c.model.enc.channels = parse_int_list(k, v, 4); }},
        {"enc.heads",
         [&](const std::string& k, const std::string& v) { c.model.enc.heads = parse_int_list(k, v, 4); }},
        {"enc.sr_ratios",
         [&](const std::string& k, const std::string& v) { c.model.enc.sr_ratios = parse_int_list(k, v, 4); }},
        {"enc.expansion",
         [&](const std::string& k, const std::string& v) { c.model.enc.expansion = static_cast<int>(parse_int(k, v)); }},
        {"enc.patch_mode",
         [&](const std::string& k, const std::string& v) {
             if (v == "overlap")
                 c.model.enc.overlap_patches = true;
             else if (v == "nonoverlap")
                 c.model.enc.overlap_patches = false;
             else
                 throw ConfigError("config: " + k + " must be overlap or nonoverlap");
         }},

        {"fus.kernel",
         [&](const std::string& k, const std::string& v) { c.model.fus.kernel = static_cast<int>(parse_int(k, v)); }},
        {"fus.reduction",
         [&](const std::string& k, const std::string& v) { c.model.fus.reduction = static_cast<int>(parse_int(k, v)); }},
        {"fus.dup_merge",
         [&](const std::string& k, const std::string& v) { c.model.fus.dup_merge = parse_bool(k, v); }},

        {"dec.width",
         [&](const std::string& k, const std::string& v) { c.model.dec.width = static_cast<int>(parse_int(k, v)); }},
        {"dec.scale",
         [&](const std::string& k, const std::string& v) { c.model.dec.scale = static_cast<int>(parse_int(k, v)); }},
        {"dec.addback",
         [&](const std::string& k, const std::string& v) {
             if (v == "post_conv")
                 c.model.dec.addback = DecoderConfig::AddBack::post_conv;
             else if (v == "pre_conv")
                 c.model.dec.addback = DecoderConfig::AddBack::pre_conv;
             else
                 throw ConfigError("config: " + k + " must be post_conv or pre_conv");
         }},

        {"loss.alpha",
         [&](const std::string& k, const std::string& v) { c.loss.alpha = parse_double(k, v); }},
        {"loss.dice_eps",
         [&](const std::string& k, const std::string& v) { c.loss.dice_eps = parse_double(k, v); }},
        {"loss.lovasz_classes",
         [&](const std::string& k, const std::string& v) {
             if (v == "present")
                 c.loss.lovasz_classes = LossConfig::LovaszClasses::present;
             else if (v == "all")
                 c.loss.lovasz_classes = LossConfig::LovaszClasses::all;
             else
                 throw ConfigError("config: " + k + " must be present or all");
         }},
        {"loss.w_bce",
         [&](const std::string& k, const std::string& v) { c.loss.w_bce = parse_double(k, v); }},
        {"loss.w_dice",
         [&](const std::string& k, const std::string& v) { c.loss.w_dice = parse_double(k, v); }},
        {"loss.w_ce",
         [&](const std::string& k, const std::string& v) { c.loss.w_ce = parse_double(k, v); }},
        {"loss.w_lovasz",
         [&](const std::string& k, const std::string& v) { c.loss.w_lovasz = parse_double(k, v); }},

        {"opt.lr", [&](const std::string& k, const std::string& v) { c.opt.lr = parse_double(k, v); }},
        {"opt.weight_decay",
         [&](const std::string& k, const std::string& v) { c.opt.weight_decay = parse_double(k, v); }},
        {"opt.beta1",
         [&](const std::string& k, const std::string& v) { c.opt.beta1 = parse_double(k, v); }},
        {"opt.beta2",
         [&](const std::string& k, const std::string& v) { c.opt.beta2 = parse_double(k, v); }},
        {"opt.eps", [&](const std::string& k, const std::string& v) { c.opt.eps = parse_double(k, v); }},
        {"opt.steps",
         [&](const std::string& k, const std::string& v) { c.opt.steps = static_cast<int>(parse_int(k, v)); }},
        {"opt.batch",
         [&](const std::string& k, const std::string& v) { c.opt.batch_size = static_cast<int>(parse_int(k, v)); }},
        {"opt.clip_norm",
         [&](const std::string& k, const std::string& v) { c.opt.clip_norm = parse_double(k, v); }},
        {"opt.stop_loss",
         [&](const std::string& k, const std::string& v) { c.opt.stop_loss = parse_double(k, v); }},
        {"opt.checkpoint_every",
         [&](const std::string& k, const std::string& v) {
             c.opt.checkpoint_every = static_cast<int>(parse_int(k, v));
         }},

        {"data.source", [&](const std::string&, const std::string& v) { c.data_source = v; }},
        {"data.dir", [&](const std::string&, const std::string& v) { c.data_dir = v; }},
        {"data.size",
         [&](const std::string& k, const std::string& v) { c.synth.size = static_cast<int>(parse_int(k, v)); }},
        {"data.train",
         [&](const std::string& k, const std::string& v) { c.train_count = static_cast<int>(parse_int(k, v)); }},
        {"data.eval",
         [&](const std::string& k, const std::string& v) { c.eval_count = static_cast<int>(parse_int(k, v)); }},
        {"data.eval_split",
         [&](const std::string& k, const std::string& v) {
             if (v == "train")
                 c.eval_on_train = true;
             else if (v == "fresh")
                 c.eval_on_train = false;
             else
                 throw ConfigError("config: " + k + " must be fresh or train");
         }},
        {"data.buildings_min",
         [&](const std::string& k, const std::string& v) {
             c.synth.buildings_min = static_cast<int>(parse_int(k, v));
         }},
        {"data.buildings_max",
         [&](const std::string& k, const std::string& v) {
             c.synth.buildings_max = static_cast<int>(parse_int(k, v));
         }},
        {"data.bsize_min",
         [&](const std::string& k, const std::string& v) { c.synth.bsize_min = static_cast<int>(parse_int(k, v)); }},
        {"data.bsize_max",
         [&](const std::string& k, const std::string& v) { c.synth.bsize_max = static_cast<int>(parse_int(k, v)); }},
        {"data.damage_probs",
         [&](const std::string& k, const std::string& v) {
             std::vector<int> dummy;
             (void)dummy;
             std::stringstream ss(v);
             std::string item;
             std::vector<double> probs;
             while (std::getline(ss, item, ',')) probs.push_back(parse_double(k, trim(item)));
             if (probs.size() != 4)
                 throw ConfigError("config: " + k + " needs 4 values, got " +
                                   std::to_string(probs.size()));
             for (size_t i = 0; i < 4; ++i) c.synth.damage_probs[i] = probs[i];
         }},
        {"data.noise",
         [&](const std::string& k, const std::string& v) { c.synth.noise = parse_double(k, v); }},
    };

    std::istringstream lines(text);
    std::string line;
    int lineno = 0;
    while (std::getline(lines, line)) {
        lineno++;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(lineno) + " is not 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        auto it = keys.find(key);
        if (it == keys.end())
            throw ConfigError("config: unknown key '" + key + "' on line " + std::to_string(lineno));
        it->second(key, value);
    }
    return c;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
}

std::string RunConfig::to_text() const {
    std::ostringstream os;
    os << "seed = " << seed << "\n";
    os << "threads = " << threads << "\n";
    os << "out = " << out_dir << "\n";
    os << "debug.check_finite = " << (check_finite ? "true" : "false") << "\n";
    os << "enc.blocks = " << fmt_int_list(model.enc.blocks) << "\n";
    os << "enc.channels = " << fmt_int_list(model.enc.channels) << "\n";
    os << "enc.heads = " << fmt_int_list(model.enc.heads) << "\n";
    os << "enc.sr_ratios = " << fmt_int_list(model.enc.sr_ratios) << "\n";
    os << "enc.expansion = " << model.enc.expansion << "\n";
    os << "enc.patch_mode = " << (model.enc.overlap_patches ? "overlap" : "nonoverlap") << "\n";
    os << "fus.kernel = " << model.fus.kernel << "\n";
    os << "fus.reduction = " << model.fus.reduction << "\n";
    os << "fus.dup_merge = " << (model.fus.dup_merge ? "true" : "false") << "\n";
    os << "dec.width = " << model.dec.width << "\n";
    os << "dec.scale = " << model.dec.scale << "\n";
    os << "dec.addback = "
       << (model.dec.addback == DecoderConfig::AddBack::post_conv ? "post_conv" : "pre_conv")
       << "\n";
    os << "loss.alpha = " << fmt_double(loss.alpha) << "\n";
    os << "loss.dice_eps = " << fmt_double(loss.dice_eps) << "\n";
    os << "loss.lovasz_classes = "
       << (loss.lovasz_classes == LossConfig::LovaszClasses::present ? "present" : "all") << "\n";
    os << "loss.w_bce = " << fmt_double(loss.w_bce) << "\n";
    os << "loss.w_dice = " << fmt_double(loss.w_dice) << "\n";
    os << "loss.w_ce = " << fmt_double(loss.w_ce) << "\n";
    os << "loss.w_lovasz = " << fmt_double(loss.w_lovasz) << "\n";
    os << "opt.lr = " << fmt_double(opt.lr) << "\n";
    os << "opt.weight_decay = " << fmt_double(opt.weight_decay) << "\n";
    os << "opt.beta1 = " << fmt_double(opt.beta1) << "\n";
    os << "opt.beta2 = " << fmt_double(opt.beta2) << "\n";
    os << "opt.eps = " << fmt_double(opt.eps) << "\n";
    os << "opt.steps = " << opt.steps << "\n";
    os << "opt.batch = " << opt.batch_size << "\n";
    os << "opt.clip_norm = " << fmt_double(opt.clip_norm) << "\n";
    os << "opt.stop_loss = " << fmt_double(opt.stop_loss) << "\n";
    os << "opt.checkpoint_every = " << opt.checkpoint_every << "\n";
    os << "data.source = " << data_source << "\n";
    if (!data_dir.empty()) os << "data.dir = " << data_dir << "\n";
    os << "data.size = " << synth.size << "\n";
    os << "data.train = " << train_count << "\n";
    os << "data.eval = " << eval_count << "\n";
    os << "data.eval_split = " << (eval_on_train ? "train" : "fresh") << "\n";
    os << "data.buildings_min = " << synth.buildings_min << "\n";
    os << "data.buildings_max = " << synth.buildings_max << "\n";
    os << "data.bsize_min = " << synth.bsize_min << "\n";
    os << "data.bsize_max = " << synth.bsize_max << "\n";
    os << "data.damage_probs = " << fmt_double(synth.damage_probs[0]) << ","
       << fmt_double(synth.damage_probs[1]) << "," << fmt_double(synth.damage_probs[2]) << ","
       << fmt_double(synth.damage_probs[3]) << "\n";
    os << "data.noise = " << fmt_double(synth.noise) << "\n";
    return os.str();
}

RunConfig RunConfig::overfit_preset() {
    RunConfig c;
    c.seed = 7;
    c.threads = 2;
    c.out_dir = "runs/overfit";
    c.train_count = 4;
    c.eval_count = 4;
    c.eval_on_train = true;
    c.synth.buildings_min = 2;
    c.synth.buildings_max = 4;
    c.opt.lr = 4e-4;
    c.opt.steps = 3000;
    c.opt.batch_size = 4;
    c.opt.stop_loss = 0.045;
    return c;
}

RunConfig RunConfig::gradcheck_preset() {
    RunConfig c;
    c.seed = 11;
    c.out_dir = "runs/gradcheck";
    c.model.enc.blocks = {2, 2, 2, 2};
    c.model.enc.channels = {8, 16, 24, 32};
    c.model.enc.heads = {1, 2, 4, 8};
    c.model.enc.expansion = 2;
    c.model.fus.reduction = 4;
    c.model.dec.width = 16;
    c.synth.size = 32;
    c.synth.buildings_min = 1;
    c.synth.buildings_max = 2;
    c.synth.bsize_min = 6;
    c.synth.bsize_max = 10;
    c.train_count = 1;
    c.eval_count = 1;
    c.opt.batch_size = 1;
    return c;
}

}  // namespace damformer
