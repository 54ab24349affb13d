#include "echat-model.h"

#include "echat-common.h"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstring>

using json = nlohmann::ordered_json;

namespace echat {

// ---------------------------------------------------------------------------
// config

void validate_model_config(const model_config & cfg) {
    auto positive = [](int32_t v, const char * name) {
        check(v >= 1, ECHAT_ERR_INVALID_CONFIG,
              std::string("model config: ") + name + " must be >= 1");
    };
    positive(cfg.feature_channels, "feature_channels");
    positive(cfg.enc_layers, "enc_layers");
    positive(cfg.enc_dim, "enc_dim");
    positive(cfg.enc_heads, "enc_heads");
    positive(cfg.enc_ffn, "enc_ffn");
    positive(cfg.adapter_tf_layers, "adapter_tf_layers");
    positive(cfg.adapter_dim, "adapter_dim");
    positive(cfg.adapter_heads, "adapter_heads");
    positive(cfg.adapter_ffn, "adapter_ffn");
    positive(cfg.lm_layers, "lm_layers");
    positive(cfg.lm_dim, "lm_dim");
    positive(cfg.lm_heads, "lm_heads");
    positive(cfg.lm_ffn, "lm_ffn");
    positive(cfg.max_positions, "max_positions");
    positive(cfg.speech_vocab, "speech_vocab");

    check(cfg.enc_dim % cfg.enc_heads == 0, ECHAT_ERR_INVALID_CONFIG,
          "model config: enc_dim must be divisible by enc_heads");
    check(cfg.adapter_dim % cfg.adapter_heads == 0, ECHAT_ERR_INVALID_CONFIG,
          "model config: adapter_dim must be divisible by adapter_heads");
    check(cfg.lm_dim % cfg.lm_heads == 0, ECHAT_ERR_INVALID_CONFIG,
          "model config: lm_dim must be divisible by lm_heads");
}

vocab_layout model_vocab(const model_config & cfg) {
    return build_vocab_layout(sym::count, cfg.speech_vocab);
}

model_config gradcheck_config() {
    model_config cfg;
    cfg.feature_channels  = 6;
    cfg.enc_layers        = 1;
    cfg.enc_dim           = 8;
    cfg.enc_heads         = 2;
    cfg.enc_ffn           = 16;
    cfg.adapter_tf_layers = 2;
    cfg.adapter_dim       = 8;
    cfg.adapter_heads     = 2;
    cfg.adapter_ffn       = 16;
    cfg.lm_layers         = 1;
    cfg.lm_dim            = 12;
    cfg.lm_heads          = 2;
    cfg.lm_ffn            = 24;
    cfg.max_positions     = 96;
    cfg.speech_vocab      = 16;
    return cfg;
}

// ---------------------------------------------------------------------------
// allocation / init

template <typename T>
void net_setup(net<T> & n, const model_config & cfg) {
    validate_model_config(cfg);
    n.cfg   = cfg;
    n.vocab = model_vocab(cfg);

    n.enc_in.setup(cfg.feature_channels, cfg.enc_dim);
    n.enc.resize(cfg.enc_layers);
    for (auto & b : n.enc) {
        b.setup(cfg.enc_dim, cfg.enc_heads, cfg.enc_ffn);
    }
    n.enc_norm.setup(cfg.enc_dim);

    n.conv[0].setup(cfg.enc_dim, cfg.adapter_dim, ADAPTER_CONV_STRIDES[0]);
    n.conv[1].setup(cfg.adapter_dim, cfg.adapter_dim, ADAPTER_CONV_STRIDES[1]);
    n.conv[2].setup(cfg.adapter_dim, cfg.adapter_dim, ADAPTER_CONV_STRIDES[2]);
    n.ad.resize(cfg.adapter_tf_layers);
    for (auto & b : n.ad) {
        b.setup(cfg.adapter_dim, cfg.adapter_heads, cfg.adapter_ffn);
    }
    n.ad_norm.setup(cfg.adapter_dim);
    n.ad_out.setup(cfg.adapter_dim, cfg.lm_dim);

    n.emb.setZero(n.vocab.total_size, cfg.lm_dim);
    n.lm.resize(cfg.lm_layers);
    for (auto & b : n.lm) {
        b.setup(cfg.lm_dim, cfg.lm_heads, cfg.lm_ffn);
    }
    n.lm_norm.setup(cfg.lm_dim);

    n.pe_enc = nn::positional_table<T>(cfg.max_positions, cfg.enc_dim);
    n.pe_ad  = nn::positional_table<T>(cfg.max_positions, cfg.adapter_dim);
    n.pe_lm  = nn::positional_table<T>(cfg.max_positions, cfg.lm_dim);
}

template <typename T>
void net_init(net<T> & n, const model_config & cfg) {
    net_setup(n, cfg);
    rng g = rng::derive(cfg.init_seed, "model-init");

    n.enc_in.init(g, cfg.feature_channels, cfg.enc_dim);
    for (auto & b : n.enc) {
        b.init(g, cfg.enc_dim, cfg.enc_heads, cfg.enc_ffn);
    }
    n.enc_norm.init(g, cfg.enc_dim);
    n.conv[0].init(g, cfg.enc_dim, cfg.adapter_dim, ADAPTER_CONV_STRIDES[0]);
    n.conv[1].init(g, cfg.adapter_dim, cfg.adapter_dim, ADAPTER_CONV_STRIDES[1]);
    n.conv[2].init(g, cfg.adapter_dim, cfg.adapter_dim, ADAPTER_CONV_STRIDES[2]);
    for (auto & b : n.ad) {
        b.init(g, cfg.adapter_dim, cfg.adapter_heads, cfg.adapter_ffn);
    }
    n.ad_norm.init(g, cfg.adapter_dim);
    n.ad_out.init(g, cfg.adapter_dim, cfg.lm_dim);

    const T emb_scale = T(1.0 / std::sqrt(double(cfg.lm_dim)));
    for (int i = 0; i < n.emb.rows(); i++) {
        for (int j = 0; j < n.emb.cols(); j++) {
            n.emb(i, j) = T(g.normal()) * emb_scale;
        }
    }
    for (auto & b : n.lm) {
        b.init(g, cfg.lm_dim, cfg.lm_heads, cfg.lm_ffn);
    }
    n.lm_norm.init(g, cfg.lm_dim);
}

// ---------------------------------------------------------------------------
// parameter enumeration (order here is the serialization order)

template <typename T>
std::vector<param_view<T>> collect_params(net<T> & n) {
    std::vector<param_view<T>> out;
    auto add = [&](const char * group, std::string name, auto & m) {
        out.push_back({ group, std::move(name), m.data(), m.rows(), m.cols() });
    };
    auto add_dense = [&](const char * group, const std::string & name, nn::dense<T> & d) {
        add(group, name + ".w", d.w);
        add(group, name + ".b", d.b);
    };
    auto add_norm = [&](const char * group, const std::string & name, nn::layernorm<T> & l) {
        add(group, name + ".g", l.g);
        add(group, name + ".b", l.b);
    };
    auto add_block = [&](const char * group, const std::string & name, nn::block<T> & b) {
        add_norm(group, name + ".ln1", b.ln1);
        add_dense(group, name + ".wq", b.att.wq);
        add_dense(group, name + ".wk", b.att.wk);
        add_dense(group, name + ".wv", b.att.wv);
        add_dense(group, name + ".wo", b.att.wo);
        add_norm(group, name + ".ln2", b.ln2);
        add_dense(group, name + ".fc1", b.mlp.fc1);
        add_dense(group, name + ".fc2", b.mlp.fc2);
    };

    add_dense("encoder", "enc.in", n.enc_in);
    for (size_t i = 0; i < n.enc.size(); i++) {
        add_block("encoder", "enc." + std::to_string(i), n.enc[i]);
    }
    add_norm("encoder", "enc.norm", n.enc_norm);

    for (int i = 0; i < 3; i++) {
        add_dense("adapter", "ad.conv" + std::to_string(i), n.conv[i].proj);
    }
    for (size_t i = 0; i < n.ad.size(); i++) {
        add_block("adapter", "ad." + std::to_string(i), n.ad[i]);
    }
    add_norm("adapter", "ad.norm", n.ad_norm);
    add_dense("adapter", "ad.out", n.ad_out);

    add("decoder", "lm.emb", n.emb);
    for (size_t i = 0; i < n.lm.size(); i++) {
        add_block("decoder", "lm." + std::to_string(i), n.lm[i]);
    }
    add_norm("decoder", "lm.norm", n.lm_norm);
    return out;
}

template <typename T>
int64_t param_count(net<T> & n) {
    int64_t total = 0;
    for (const auto & p : collect_params(n)) {
        total += p.size();
    }
    return total;
}

template <typename T>
void zero_all(net<T> & n) {
    for (auto & p : collect_params(n)) {
        std::fill(p.data, p.data + p.size(), T(0));
    }
}

template <typename T>
bool params_finite(net<T> & n) {
    for (auto & p : collect_params(n)) {
        for (int64_t i = 0; i < p.size(); i++) {
            if (!std::isfinite(double(p.data[i]))) {
                return false;
            }
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// encoder

template <typename T>
nn::mat<T> net_encode(const net<T> & n, const nn::mat<T> & features, encoder_state<T> & st) {
    check(features.cols() == n.cfg.feature_channels, ECHAT_ERR_INVALID_ARGUMENT,
          "encoder input has " + std::to_string(features.cols()) + " channels, expected " +
          std::to_string(n.cfg.feature_channels));
    check(features.rows() >= 1, ECHAT_ERR_INVALID_ARGUMENT, "encoder input is empty");
    check(features.rows() <= n.cfg.max_positions, ECHAT_ERR_CAPACITY,
          "encoder input exceeds max_positions");

    st.x = features;
    nn::mat<T> h = n.enc_in.forward(features);
    h += n.pe_enc.topRows(h.rows());
    st.blocks.resize(n.enc.size());
    for (size_t i = 0; i < n.enc.size(); i++) {
        h = n.enc[i].forward(h, false, st.blocks[i]);
    }
    return n.enc_norm.forward(h, st.out_c);
}

template <typename T>
nn::mat<T> net_encode_backward(const net<T> & n, const encoder_state<T> & st,
                               const nn::mat<T> & d_out, net<T> & g) {
    nn::mat<T> d = n.enc_norm.backward(st.out_c, d_out, g.enc_norm);
    for (size_t i = n.enc.size(); i-- > 0;) {
        d = n.enc[i].backward(st.blocks[i], d, false, g.enc[i]);
    }
    return n.enc_in.backward(st.x, d, g.enc_in);
}

// ---------------------------------------------------------------------------
// adapter

template <typename T>
nn::mat<T> net_adapt(const net<T> & n, const nn::mat<T> & hidden, adapter_state<T> & st) {
    check(hidden.rows() >= 1, ECHAT_ERR_INVALID_ARGUMENT, "adapter input is empty");
    check(hidden.cols() == n.cfg.enc_dim, ECHAT_ERR_INVALID_ARGUMENT,
          "adapter input width mismatch");
    check(hidden.rows() <= n.cfg.max_positions, ECHAT_ERR_CAPACITY,
          "adapter input exceeds max_positions");

    nn::mat<T> h = hidden;
    for (int i = 0; i < 3; i++) {
        st.conv_h[i] = n.conv[i].forward(h, st.conv_c[i]);
        h = nn::gelu_forward(st.conv_h[i]);
    }
    h += n.pe_ad.topRows(h.rows());
    st.blocks.resize(n.ad.size());
    for (size_t i = 0; i < n.ad.size(); i++) {
        h = n.ad[i].forward(h, false, st.blocks[i]);
    }
    st.norm_y = n.ad_norm.forward(h, st.norm_c);
    return n.ad_out.forward(st.norm_y);
}

template <typename T>
nn::mat<T> net_adapt_backward(const net<T> & n, const adapter_state<T> & st,
                              const nn::mat<T> & d_out, net<T> & g) {
    nn::mat<T> d = n.ad_out.backward(st.norm_y, d_out, g.ad_out);
    d = n.ad_norm.backward(st.norm_c, d, g.ad_norm);
    for (size_t i = n.ad.size(); i-- > 0;) {
        d = n.ad[i].backward(st.blocks[i], d, false, g.ad[i]);
    }
    for (int i = 2; i >= 0; i--) {
        d = nn::gelu_backward(st.conv_h[i], d);
        d = n.conv[i].backward(st.conv_c[i], d, g.conv[i]);
    }
    return d;
}

// ---------------------------------------------------------------------------
// decoder LM

template <typename T>
static nn::mat<T> lm_build_rows(const net<T> & n, const lm_input<T> & in, int32_t pos0) {
    const int32_t len = (int32_t) in.tokens.size();
    check(len >= 1, ECHAT_ERR_INVALID_ARGUMENT, "lm input is empty");
    check(pos0 + len <= n.cfg.max_positions, ECHAT_ERR_CAPACITY,
          "lm input exceeds max_positions");

    const T scale = T(std::sqrt(double(n.cfg.lm_dim)));
    nn::mat<T> x(len, n.cfg.lm_dim);
    int32_t soft = 0;
    for (int32_t t = 0; t < len; t++) {
        const int32_t id = in.tokens[t];
        if (id < 0) {
            check(soft < in.soft.rows(), ECHAT_ERR_INVALID_ARGUMENT,
                  "lm input has more soft slots than soft rows");
            x.row(t) = in.soft.row(soft++);
        } else {
            check(id < n.vocab.total_size, ECHAT_ERR_DOMAIN,
                  "lm input token " + std::to_string(id) + " out of vocabulary");
            x.row(t) = n.emb.row(id) * scale;
        }
        x.row(t) += n.pe_lm.row(pos0 + t);
    }
    check(soft == in.soft.rows(), ECHAT_ERR_INVALID_ARGUMENT,
          "lm input soft rows unused by any slot");
    return x;
}

template <typename T>
nn::mat<T> net_lm(const net<T> & n, const lm_input<T> & in, lm_train_state<T> & st) {
    st.tokens = in.tokens;
    nn::mat<T> h = lm_build_rows(n, in, 0);
    st.blocks.resize(n.lm.size());
    for (size_t i = 0; i < n.lm.size(); i++) {
        h = n.lm[i].forward(h, true, st.blocks[i]);
    }
    st.hidden = n.lm_norm.forward(h, st.norm_c);
    return st.hidden * n.emb.transpose();
}

template <typename T>
nn::mat<T> net_lm_backward(const net<T> & n, const lm_train_state<T> & st,
                           const nn::mat<T> & d_logits, net<T> & g) {
    g.emb.noalias() += d_logits.transpose() * st.hidden;
    nn::mat<T> d = d_logits * n.emb;
    d = n.lm_norm.backward(st.norm_c, d, g.lm_norm);
    for (size_t i = n.lm.size(); i-- > 0;) {
        d = n.lm[i].backward(st.blocks[i], d, true, g.lm[i]);
    }

    const T scale = T(std::sqrt(double(n.cfg.lm_dim)));
    int32_t n_soft = 0;
    for (int32_t id : st.tokens) {
        n_soft += id < 0 ? 1 : 0;
    }
    nn::mat<T> d_soft(n_soft, n.cfg.lm_dim);
    int32_t soft = 0;
    for (int32_t t = 0; t < (int32_t) st.tokens.size(); t++) {
        const int32_t id = st.tokens[t];
        if (id < 0) {
            d_soft.row(soft++) = d.row(t);
        } else {
            g.emb.row(id) += d.row(t) * scale;
        }
    }
    return d_soft;
}

// ---------------------------------------------------------------------------
// incremental decoding

template <typename T>
void lm_decode_reset(const net<T> & n, lm_decode_state<T> & st) {
    st.kv.resize(n.lm.size());
    for (auto & s : st.kv) {
        s.reset(n.cfg.max_positions, n.cfg.lm_dim);
    }
    st.len = 0;
}

template <typename T>
nn::mat<T> lm_decode_feed(const net<T> & n, lm_decode_state<T> & st, const lm_input<T> & in) {
    check((int32_t) st.kv.size() == n.cfg.lm_layers, ECHAT_ERR_STATE,
          "decode state not initialized for this model");
    nn::mat<T> h = lm_build_rows(n, in, st.len);
    for (size_t i = 0; i < n.lm.size(); i++) {
        h = n.lm[i].feed(h, st.kv[i]);
    }
    st.len += (int32_t) in.tokens.size();
    typename nn::layernorm<T>::cache tmp;
    h = n.lm_norm.forward(h, tmp);
    return h * n.emb.transpose();
}

// ---------------------------------------------------------------------------
// checkpoint container

static const char * CHECKPOINT_MAGIC = "echat-checkpoint 1";

static json config_to_json(const model_config & c) {
    json j;
    j["feature_channels"]  = c.feature_channels;
    j["enc_layers"]        = c.enc_layers;
    j["enc_dim"]           = c.enc_dim;
    j["enc_heads"]         = c.enc_heads;
    j["enc_ffn"]           = c.enc_ffn;
    j["adapter_tf_layers"] = c.adapter_tf_layers;
    j["adapter_dim"]       = c.adapter_dim;
    j["adapter_heads"]     = c.adapter_heads;
    j["adapter_ffn"]       = c.adapter_ffn;
    j["lm_layers"]         = c.lm_layers;
    j["lm_dim"]            = c.lm_dim;
    j["lm_heads"]          = c.lm_heads;
    j["lm_ffn"]            = c.lm_ffn;
    j["max_positions"]     = c.max_positions;
    j["speech_vocab"]      = c.speech_vocab;
    j["init_seed"]         = c.init_seed;
    return j;
}

static model_config config_from_json(const json & j) {
    model_config c;
    c.feature_channels  = j.at("feature_channels").get<int32_t>();
    c.enc_layers        = j.at("enc_layers").get<int32_t>();
    c.enc_dim           = j.at("enc_dim").get<int32_t>();
    c.enc_heads         = j.at("enc_heads").get<int32_t>();
    c.enc_ffn           = j.at("enc_ffn").get<int32_t>();
    c.adapter_tf_layers = j.at("adapter_tf_layers").get<int32_t>();
    c.adapter_dim       = j.at("adapter_dim").get<int32_t>();
    c.adapter_heads     = j.at("adapter_heads").get<int32_t>();
    c.adapter_ffn       = j.at("adapter_ffn").get<int32_t>();
    c.lm_layers         = j.at("lm_layers").get<int32_t>();
    c.lm_dim            = j.at("lm_dim").get<int32_t>();
    c.lm_heads          = j.at("lm_heads").get<int32_t>();
    c.lm_ffn            = j.at("lm_ffn").get<int32_t>();
    c.max_positions     = j.at("max_positions").get<int32_t>();
    c.speech_vocab      = j.at("speech_vocab").get<int32_t>();
    c.init_seed         = j.at("init_seed").get<uint64_t>();
    return c;
}

void write_checkpoint(const std::string & path, model & m) {
    auto views = collect_params(m);

    std::string payload;
    json arrays = json::array();
    for (const auto & p : views) {
        arrays.push_back({
            { "name", p.name }, { "group", p.group },
            { "rows", p.rows }, { "cols", p.cols },
        });
        payload.append(reinterpret_cast<const char *>(p.data), size_t(p.size()) * sizeof(float));
    }

    json manifest;
    manifest["config"]       = config_to_json(m.cfg);
    manifest["arrays"]       = std::move(arrays);
    manifest["param_count"]  = param_count(m);
    manifest["payload_hash"] = hash_hex(hash_bytes(payload.data(), payload.size()));

    std::string out = std::string(CHECKPOINT_MAGIC) + "\n" + manifest.dump() + "\n" + payload;
    write_binary_file(path, out.data(), out.size());
}

model read_checkpoint(const std::string & path) {
    const std::vector<uint8_t> raw = read_binary_file(path);
    const std::string_view view(reinterpret_cast<const char *>(raw.data()), raw.size());

    const size_t magic_end = view.find('\n');
    check(magic_end != std::string_view::npos && view.substr(0, magic_end) == CHECKPOINT_MAGIC,
          ECHAT_ERR_FORMAT, "not a checkpoint file: " + path);
    const size_t manifest_end = view.find('\n', magic_end + 1);
    check(manifest_end != std::string_view::npos, ECHAT_ERR_FORMAT,
          "checkpoint manifest missing: " + path);

    json manifest;
    model_config cfg;
    try {
        manifest = json::parse(view.substr(magic_end + 1, manifest_end - magic_end - 1));
        cfg      = config_from_json(manifest.at("config"));
    } catch (const json::exception & e) {
        fail(ECHAT_ERR_FORMAT, std::string("checkpoint manifest invalid: ") + e.what());
    }

    model m;
    net_setup(m, cfg);
    auto views = collect_params(m);

    const json & arrays = manifest.at("arrays");
    check(arrays.is_array() && arrays.size() == views.size(), ECHAT_ERR_FORMAT,
          "checkpoint array table mismatch");
    for (size_t i = 0; i < views.size(); i++) {
        const json & a = arrays[i];
        check(a.at("name") == views[i].name && a.at("group") == views[i].group &&
              a.at("rows").get<int64_t>() == views[i].rows &&
              a.at("cols").get<int64_t>() == views[i].cols,
              ECHAT_ERR_FORMAT, "checkpoint array table mismatch at " + views[i].name);
    }

    const char * payload = reinterpret_cast<const char *>(raw.data()) + manifest_end + 1;
    const size_t payload_size = raw.size() - manifest_end - 1;
    size_t want = 0;
    for (const auto & p : views) {
        want += size_t(p.size()) * sizeof(float);
    }
    check(payload_size == want, ECHAT_ERR_FORMAT, "checkpoint payload size mismatch");
    check(hash_hex(hash_bytes(payload, payload_size)) ==
          manifest.at("payload_hash").get<std::string>(),
          ECHAT_ERR_FORMAT, "checkpoint payload hash mismatch");

    size_t off = 0;
    for (auto & p : views) {
        std::memcpy(p.data, payload + off, size_t(p.size()) * sizeof(float));
        off += size_t(p.size()) * sizeof(float);
    }
    return m;
}

// ---------------------------------------------------------------------------
// explicit instantiations (float for runtime, double for gradient checking)

#define ECHAT_INSTANTIATE(T)                                                              \
    template void net_setup<T>(net<T> &, const model_config &);                           \
    template void net_init<T>(net<T> &, const model_config &);                            \
    template std::vector<param_view<T>> collect_params<T>(net<T> &);                      \
    template int64_t param_count<T>(net<T> &);                                            \
    template void zero_all<T>(net<T> &);                                                  \
    template bool params_finite<T>(net<T> &);                                             \
    template nn::mat<T> net_encode<T>(const net<T> &, const nn::mat<T> &,                 \
                                      encoder_state<T> &);                                \
    template nn::mat<T> net_encode_backward<T>(const net<T> &, const encoder_state<T> &,  \
                                               const nn::mat<T> &, net<T> &);             \
    template nn::mat<T> net_adapt<T>(const net<T> &, const nn::mat<T> &,                  \
                                     adapter_state<T> &);                                 \
    template nn::mat<T> net_adapt_backward<T>(const net<T> &, const adapter_state<T> &,   \
                                              const nn::mat<T> &, net<T> &);              \
    template nn::mat<T> net_lm<T>(const net<T> &, const lm_input<T> &,                    \
                                  lm_train_state<T> &);                                   \
    template nn::mat<T> net_lm_backward<T>(const net<T> &, const lm_train_state<T> &,     \
                                           const nn::mat<T> &, net<T> &);                 \
    template void lm_decode_reset<T>(const net<T> &, lm_decode_state<T> &);               \
    template nn::mat<T> lm_decode_feed<T>(const net<T> &, lm_decode_state<T> &,           \
                                          const lm_input<T> &);

ECHAT_INSTANTIATE(float)
ECHAT_INSTANTIATE(double)

#undef ECHAT_INSTANTIATE

} // namespace echat
