#include <doctest.h>

#include <string>

#include <json.hpp>

#include "mgeo/runconfig.hpp"
#include "testutil.hpp"

using namespace mgeo;
using namespace testutil;
using cfg::RunConfig;

namespace {

bool throws_config_error_starting_with(const std::function<void()>& fn, const std::string& prefix) {
    try {
        fn();
    } catch (const cfg::ConfigError& e) {
        return std::string(e.what()).rfind(prefix, 0) == 0;
    }
    return false;
}

}  // namespace

TEST_CASE("the desk profile resolves to the small-trunk settings") {
    RunConfig rc = cfg::make_profile("desk");
    CHECK_NOTHROW(rc.validate());
    CHECK(rc.profile == "desk");
    CHECK(rc.seed == 17);
    CHECK(rc.gen.seed == rc.seed);

    CHECK(rc.gc.k == 10);
    CHECK(rc.gc.grid_n == 64);
    CHECK(rc.gc.n_max == 16);
    CHECK(rc.gc.radius == 1000.0);
    CHECK(rc.gc.line_eps == 5.0);
    CHECK(rc.gc.id_vocab == 509);

    CHECK(rc.geo_trunk.layers == 2);
    CHECK(rc.geo_trunk.hidden == 64);
    CHECK(rc.geo_trunk.heads == 4);
    CHECK(rc.geo_trunk.max_seq == 24);
    CHECK(rc.mm_trunk.layers == 2);
    CHECK(rc.mm_trunk.hidden == 64);
    CHECK(rc.mm_trunk.max_seq == 96);

    CHECK(rc.geo_train.epochs == 10);
    CHECK(rc.geo_train.batch_size == 32);
    CHECK(rc.geo_train.opt.lr == 1e-3);
    CHECK(rc.geo_train.opt.clip_norm == 1.0);
    CHECK(rc.mm_pretrain.epochs == 10);
    CHECK(rc.mm_pretrain.batch_size == 16);

    CHECK(rc.ft_bi.head == mm::Head::BI);
    CHECK(rc.ft_bi.epochs == 3);
    CHECK(rc.ft_bi.accum == 8);
    CHECK(rc.ft_bi.max_candidates == 10);
    CHECK(rc.ft_bi.temperature == 0.05);
    CHECK(rc.ft_bi.dev_eval_cap == 150);
    CHECK(rc.ft_cross.head == mm::Head::CROSS);
    CHECK(rc.ft_cross.max_candidates == 6);
    CHECK(rc.ft_cross.dev_eval_cap == 100);
}

TEST_CASE("profile \"paper\" resolves to the full-size settings") {
    RunConfig rc = cfg::make_profile("paper");
    CHECK_NOTHROW(rc.validate());
    CHECK(rc.gc.grid_n == 2000);
    CHECK(rc.gc.n_max == 20);
    CHECK(rc.gc.id_vocab == 50021);
    CHECK(rc.geo_trunk.layers == 4);
    CHECK(rc.geo_trunk.hidden == 256);
    CHECK(rc.geo_trunk.max_seq == 64);
    CHECK(rc.mm_trunk.max_seq == 256);
    CHECK(rc.geo_train.batch_size == 512);
    CHECK(rc.ft_bi.accum == 64);
    CHECK(rc.ft_bi.max_candidates == 20);
    CHECK(rc.ft_cross.head == mm::Head::CROSS);
}

TEST_CASE("unknown profile names are rejected") {
    CHECK_THROWS_WITH_AS(cfg::make_profile("tiny"),
                         "unknown profile: tiny (expected desk or paper)", cfg::ConfigError);
}

TEST_CASE("canonical serialization is byte-stable and round-trips") {
    RunConfig rc = cfg::make_profile("desk");
    std::string a = cfg::canonical_json(rc);
    std::string b = cfg::canonical_json(rc);
    CHECK(a == b);
    CHECK(a.back() == '\n');
    CHECK(a.find("\"profile\": \"desk\"") != std::string::npos);

    RunConfig back = cfg::runconfig_from_json_text(a);
    CHECK(cfg::canonical_json(back) == a);

    TempDir tmp;
    std::string path = tmp.file("config.json");
    cfg::save_runconfig(rc, path);
    CHECK(read_file(path) == a);
    RunConfig loaded = cfg::load_runconfig(path);
    CHECK(cfg::canonical_json(loaded) == a);
}

TEST_CASE("the config hash is a stable hex digest sensitive to every field") {
    RunConfig rc = cfg::make_profile("desk");
    std::string h = cfg::config_hash(rc);
    REQUIRE(h.size() == 16);
    for (char c : h) CHECK(((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f')));
    CHECK(cfg::config_hash(rc) == h);

    RunConfig seed_changed = rc;
    seed_changed.seed = 18;
    CHECK(cfg::config_hash(seed_changed) != h);

    RunConfig gc_changed = rc;
    gc_changed.gc.k = 11;
    CHECK(cfg::config_hash(gc_changed) != h);

    RunConfig ft_changed = rc;
    ft_changed.ft_bi.temperature = 0.1;
    CHECK(cfg::config_hash(ft_changed) != h);
}

TEST_CASE("config files with missing pieces fail loudly") {
    TempDir tmp;
    CHECK(throws_config_error_starting_with(
        [&] { cfg::load_runconfig(tmp.file("absent.json")); }, "cannot read config file:"));

    CHECK(throws_config_error_starting_with(
        [] { cfg::runconfig_from_json_text("{!not json"); }, "invalid config JSON:"));

    RunConfig rc = cfg::make_profile("desk");
    nlohmann::json j = nlohmann::json::parse(cfg::canonical_json(rc));
    j.erase("seed");
    CHECK(throws_config_error_starting_with(
        [&] { cfg::runconfig_from_json_text(j.dump()); }, "config missing or mistyped field:"));

    nlohmann::json bad_head = nlohmann::json::parse(cfg::canonical_json(rc));
    bad_head["ft_bi"]["head"] = "both";
    CHECK_THROWS_WITH_AS(cfg::runconfig_from_json_text(bad_head.dump()), "unknown head: both",
                         cfg::ConfigError);

    nlohmann::json bad_rect = nlohmann::json::parse(cfg::canonical_json(rc));
    bad_rect["gen"]["city"] = nlohmann::json::array({1.0, 2.0, 3.0});
    CHECK_THROWS_WITH_AS(cfg::runconfig_from_json_text(bad_rect.dump()),
                         "rect must be [left,bottom,right,top]", cfg::ConfigError);
}

TEST_CASE("run configuration validation cross-checks the stages") {
    RunConfig rc = cfg::make_profile("desk");

    RunConfig width = rc;
    width.mm_trunk.hidden = 32;
    CHECK_THROWS_WITH_AS(width.validate(),
                         "geographic and interaction trunks must share a hidden width",
                         cfg::ConfigError);

    RunConfig seq = rc;
    seq.geo_trunk.max_seq = 16;  // n_max 16 objects need 17 rows
    CHECK_THROWS_WITH_AS(seq.validate(),
                         "geo trunk max_seq too small for n_max objects plus the GC token",
                         cfg::ConfigError);

    RunConfig epochs = rc;
    epochs.geo_train.epochs = 0;
    CHECK_THROWS_WITH_AS(epochs.validate(), "pre-training epochs must be at least 1",
                         cfg::ConfigError);

    RunConfig heads = rc;
    heads.ft_cross.head = mm::Head::BI;
    CHECK_THROWS_WITH_AS(heads.validate(), "fine-tune configs wired to the wrong heads",
                         cfg::ConfigError);
}
