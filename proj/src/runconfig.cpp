#include "mgeo/runconfig.hpp"

#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "mgeo/rng.hpp"

namespace mgeo::cfg {

namespace {

using nlohmann::json;

json rect_to_json(const spatial::Rect& r) {
    return json{r.left, r.bottom, r.right, r.top};
}

spatial::Rect rect_from_json(const json& j) {
    if (!j.is_array() || j.size() != 4) throw ConfigError("rect must be [left,bottom,right,top]");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

json opt_to_json(const nn::AdamWConfig& o) {
    return json{{"beta1", o.beta1},
                {"beta2", o.beta2},
                {"clip_norm", o.clip_norm},
                {"eps", o.eps},
                {"lr", o.lr},
                {"weight_decay", o.weight_decay}};
}

nn::AdamWConfig opt_from_json(const json& j) {
    nn::AdamWConfig o;
    o.beta1 = j.at("beta1").get<double>();
    o.beta2 = j.at("beta2").get<double>();
    o.clip_norm = j.at("clip_norm").get<double>();
    o.eps = j.at("eps").get<double>();
    o.lr = j.at("lr").get<double>();
    o.weight_decay = j.at("weight_decay").get<double>();
    return o;
}

json trunk_to_json(const nn::TransformerConfig& t) {
    return json{{"ffn_mult", t.ffn_mult},
                {"heads", t.heads},
                {"hidden", t.hidden},
                {"layers", t.layers},
                {"max_seq", t.max_seq}};
}

nn::TransformerConfig trunk_from_json(const json& j) {
    nn::TransformerConfig t;
    t.ffn_mult = j.at("ffn_mult").get<int>();
    t.heads = j.at("heads").get<int>();
    t.hidden = j.at("hidden").get<int>();
    t.layers = j.at("layers").get<int>();
    t.max_seq = j.at("max_seq").get<int>();
    return t;
}

json gen_to_json(const gen::GenSpec& g) {
    return json{{"address_fraction", g.address_fraction},
                {"city", rect_to_json(g.city)},
                {"collision_group_size", g.collision_group_size},
                {"collision_rate", g.collision_rate},
                {"dev_fraction", g.dev_fraction},
                {"eval_candidates", g.eval_candidates},
                {"near_fraction", g.near_fraction},
                {"pois", g.pois},
                {"polygons", g.polygons},
                {"queries", g.queries},
                {"roads", g.roads},
                {"seed", g.seed},
                {"street_no_fraction", g.street_no_fraction},
                {"train_candidates", g.train_candidates},
                {"train_fraction", g.train_fraction}};
}

gen::GenSpec gen_from_json(const json& j) {
    gen::GenSpec g;
    g.address_fraction = j.at("address_fraction").get<double>();
    g.city = rect_from_json(j.at("city"));
    g.collision_group_size = j.at("collision_group_size").get<int>();
    g.collision_rate = j.at("collision_rate").get<double>();
    g.dev_fraction = j.at("dev_fraction").get<double>();
    g.eval_candidates = j.at("eval_candidates").get<int>();
    g.near_fraction = j.at("near_fraction").get<double>();
    g.pois = j.at("pois").get<int>();
    g.polygons = j.at("polygons").get<int>();
    g.queries = j.at("queries").get<int>();
    g.roads = j.at("roads").get<int>();
    g.seed = j.at("seed").get<uint64_t>();
    g.street_no_fraction = j.at("street_no_fraction").get<double>();
    g.train_candidates = j.at("train_candidates").get<int>();
    g.train_fraction = j.at("train_fraction").get<double>();
    return g;
}

json gc_to_json(const gc::GcConfig& c) {
    return json{{"grid_n", c.grid_n},
                {"id_vocab", c.id_vocab},
                {"k", c.k},
                {"line_eps", c.line_eps},
                {"map_bounds", rect_to_json(c.map_bounds)},
                {"n_max", c.n_max},
                {"radius", c.radius}};
}

gc::GcConfig gc_from_json(const json& j) {
    gc::GcConfig c;
    c.grid_n = j.at("grid_n").get<int>();
    c.id_vocab = j.at("id_vocab").get<int>();
    c.k = j.at("k").get<int>();
    c.line_eps = j.at("line_eps").get<double>();
    c.map_bounds = rect_from_json(j.at("map_bounds"));
    c.n_max = j.at("n_max").get<int>();
    c.radius = j.at("radius").get<double>();
    return c;
}

json geo_train_to_json(const geoenc::GeoTrainConfig& t) {
    return json{{"batch_size", t.batch_size},
                {"epochs", t.epochs},
                {"mask_prob", t.mask_prob},
                {"opt", opt_to_json(t.opt)}};
}

geoenc::GeoTrainConfig geo_train_from_json(const json& j) {
    geoenc::GeoTrainConfig t;
    t.batch_size = j.at("batch_size").get<int>();
    t.epochs = j.at("epochs").get<int>();
    t.mask_prob = j.at("mask_prob").get<double>();
    t.opt = opt_from_json(j.at("opt"));
    return t;
}

json pretrain_to_json(const mm::PretrainConfig& t) {
    return json{{"batch_size", t.batch_size},
                {"epochs", t.epochs},
                {"mask_prob", t.mask_prob},
                {"opt", opt_to_json(t.opt)}};
}

mm::PretrainConfig pretrain_from_json(const json& j) {
    mm::PretrainConfig t;
    t.batch_size = j.at("batch_size").get<int>();
    t.epochs = j.at("epochs").get<int>();
    t.mask_prob = j.at("mask_prob").get<double>();
    t.opt = opt_from_json(j.at("opt"));
    return t;
}

json ft_to_json(const mm::FinetuneConfig& f) {
    return json{{"accum", f.accum},
                {"dev_eval_cap", f.dev_eval_cap},
                {"epochs", f.epochs},
                {"head", head_name(f.head)},
                {"max_candidates", f.max_candidates},
                {"opt", opt_to_json(f.opt)},
                {"temperature", f.temperature}};
}

mm::FinetuneConfig ft_from_json(const json& j) {
    mm::FinetuneConfig f;
    f.accum = j.at("accum").get<int>();
    f.dev_eval_cap = j.at("dev_eval_cap").get<int>();
    f.epochs = j.at("epochs").get<int>();
    std::string h = j.at("head").get<std::string>();
    if (h == "bi")
        f.head = mm::Head::BI;
    else if (h == "cross")
        f.head = mm::Head::CROSS;
    else
        throw ConfigError("unknown head: " + h);
    f.max_candidates = j.at("max_candidates").get<int>();
    f.opt = opt_from_json(j.at("opt"));
    f.temperature = j.at("temperature").get<double>();
    return f;
}

json to_json(const RunConfig& rc) {
    return json{{"ft_bi", ft_to_json(rc.ft_bi)},
                {"ft_cross", ft_to_json(rc.ft_cross)},
                {"gc", gc_to_json(rc.gc)},
                {"gen", gen_to_json(rc.gen)},
                {"geo_train", geo_train_to_json(rc.geo_train)},
                {"geo_trunk", trunk_to_json(rc.geo_trunk)},
                {"mm_pretrain", pretrain_to_json(rc.mm_pretrain)},
                {"mm_trunk", trunk_to_json(rc.mm_trunk)},
                {"profile", rc.profile},
                {"seed", rc.seed}};
}

RunConfig from_json(const json& j) {
    RunConfig rc;
    rc.ft_bi = ft_from_json(j.at("ft_bi"));
    rc.ft_cross = ft_from_json(j.at("ft_cross"));
    rc.gc = gc_from_json(j.at("gc"));
    rc.gen = gen_from_json(j.at("gen"));
    rc.geo_train = geo_train_from_json(j.at("geo_train"));
    rc.geo_trunk = trunk_from_json(j.at("geo_trunk"));
    rc.mm_pretrain = pretrain_from_json(j.at("mm_pretrain"));
    rc.mm_trunk = trunk_from_json(j.at("mm_trunk"));
    rc.profile = j.at("profile").get<std::string>();
    rc.seed = j.at("seed").get<uint64_t>();
    return rc;
}

}  // namespace

void RunConfig::validate() const {
    gen.validate();
    geo_trunk.validate();
    mm_trunk.validate();
    if (geo_trunk.hidden != mm_trunk.hidden)
        throw ConfigError("geographic and interaction trunks must share a hidden width");
    if (geo_trunk.max_seq < gc.n_max + 1)
        throw ConfigError("geo trunk max_seq too small for n_max objects plus the GC token");
    if (geo_train.epochs < 1 || mm_pretrain.epochs < 1)
        throw ConfigError("pre-training epochs must be at least 1");
    if (ft_bi.head != mm::Head::BI || ft_cross.head != mm::Head::CROSS)
        throw ConfigError("fine-tune configs wired to the wrong heads");
}

RunConfig make_profile(const std::string& name) {
    RunConfig rc;
    rc.profile = name;
    if (name == "desk") {
        rc.gc.k = 10;
        rc.gc.grid_n = 64;
        rc.gc.n_max = 16;
        rc.gc.radius = 1000.0;
        rc.gc.line_eps = 5.0;
        rc.gc.id_vocab = 509;
        rc.geo_trunk = {2, 64, 4, 2, 24};
        rc.mm_trunk = {2, 64, 4, 2, 96};
        rc.geo_train.epochs = 10;
        rc.geo_train.batch_size = 32;
        rc.geo_train.opt.lr = 1e-3;
        rc.geo_train.opt.clip_norm = 1.0;
        rc.mm_pretrain.epochs = 10;
        rc.mm_pretrain.batch_size = 16;
        rc.mm_pretrain.opt.lr = 1e-3;
        rc.mm_pretrain.opt.clip_norm = 1.0;
        rc.ft_bi.head = mm::Head::BI;
        rc.ft_bi.epochs = 3;
        rc.ft_bi.accum = 8;
        rc.ft_bi.max_candidates = 10;
        rc.ft_bi.dev_eval_cap = 150;
        rc.ft_bi.opt.lr = 1e-3;
        rc.ft_bi.opt.clip_norm = 1.0;
        rc.ft_cross = rc.ft_bi;
        rc.ft_cross.head = mm::Head::CROSS;
        rc.ft_cross.max_candidates = 6;
        rc.ft_cross.dev_eval_cap = 100;
    } else if (name == "paper") {
        rc.gc.k = 10;
        rc.gc.grid_n = 2000;
        rc.gc.n_max = 20;
        rc.gc.radius = 1000.0;
        rc.gc.line_eps = 5.0;
        rc.gc.id_vocab = 50021;
        rc.geo_trunk = {4, 256, 4, 4, 64};
        rc.mm_trunk = {4, 256, 4, 4, 256};
        rc.geo_train.epochs = 30;
        rc.geo_train.batch_size = 512;
        rc.geo_train.opt.lr = 1e-4;
        rc.mm_pretrain.epochs = 30;
        rc.mm_pretrain.batch_size = 512;
        rc.mm_pretrain.opt.lr = 1e-4;
        rc.ft_bi.head = mm::Head::BI;
        rc.ft_bi.epochs = 10;
        rc.ft_bi.accum = 64;
        rc.ft_bi.max_candidates = 20;
        rc.ft_bi.dev_eval_cap = 1000000;
        rc.ft_bi.opt.lr = 5e-5;
        rc.ft_cross = rc.ft_bi;
        rc.ft_cross.head = mm::Head::CROSS;
    } else {
        throw ConfigError("unknown profile: " + name + " (expected desk or paper)");
    }
    rc.gen.seed = rc.seed;
    return rc;
}

std::string canonical_json(const RunConfig& rc) {
    return to_json(rc).dump(2) + "\n";
}

std::string config_hash(const RunConfig& rc) {
    uint64_t h = fnv1a64(canonical_json(rc));
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void save_runconfig(const RunConfig& rc, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write config file: " + path);
    out << canonical_json(rc);
    if (!out) throw ConfigError("failed writing config file: " + path);
}

RunConfig runconfig_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid config JSON: ") + e.what());
    }
    try {
        return from_json(j);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config missing or mistyped field: ") + e.what());
    }
}

RunConfig load_runconfig(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return runconfig_from_json_text(text);
}

}  // namespace mgeo::cfg
