#pragma once

// the neural stack: feature encoder, 4x-downsampling adapter, decoder-only
// LM over the extended vocabulary.  the stack is templated on the scalar so
// the gradient checker can run it end-to-end in double precision; training
// and inference use net<float>.
//
// layout:
//   encoder:  dense C->D_e, sinusoidal positions, N bidirectional pre-ln
//             blocks, final layernorm.  length preserving.
//   adapter:  3 convolutions (kernel 3, strides 2/2/1, right zero pad, gelu)
//             for an exact ceil(T/4) downsample, positions, 4 bidirectional
//             blocks, layernorm, dense to the LM width.
//   decoder:  tied token embeddings (rows scaled by sqrt(D)), positions,
//             causal pre-ln blocks, final layernorm; logits share the
//             embedding table.
//
// forward passes write activations into caller-owned state structs; backward
// accumulates into a parallel net<T> holding gradients.  a parameter
// snapshot is safe for any number of concurrent forward/backward callers;
// mutating parameters (optimizer, checkpoint load) requires exclusivity.

#include "echat-nn.h"
#include "echat-vocab.h"

#include <array>
#include <string>
#include <vector>

namespace echat {

// ---------------------------------------------------------------------------
// config

struct model_config {
    int32_t feature_channels = 80;

    int32_t enc_layers = 2;
    int32_t enc_dim    = 32;
    int32_t enc_heads  = 4;
    int32_t enc_ffn    = 128;

    // conv count and stride plan are structural: strides 2,2,1 give the
    // exact ceil(T/4) length law the rest of the system depends on
    int32_t adapter_tf_layers = 4;
    int32_t adapter_dim       = 48;
    int32_t adapter_heads     = 4;
    int32_t adapter_ffn       = 192;

    int32_t lm_layers = 4;
    int32_t lm_dim    = 64;
    int32_t lm_heads  = 4;
    int32_t lm_ffn    = 256;

    int32_t  max_positions = 640;
    int32_t  speech_vocab  = 256;  // must match the codec codebook
    uint64_t init_seed     = 1;

    bool operator==(const model_config &) const = default;
};

// throws invalid_config naming the offending field
void validate_model_config(const model_config & cfg);

// the token space implied by the config (text symbols + speech + controls)
vocab_layout model_vocab(const model_config & cfg);

// a reduced double-precision-friendly configuration for gradient checking
model_config gradcheck_config();

// closed-form adapter output length for input length t >= 1
inline int32_t adapter_out_len(int32_t t) { return (t + 3) / 4; }

// ---------------------------------------------------------------------------
// parameters

template <typename T>
struct net {
    model_config cfg;
    vocab_layout vocab;

    // encoder
    nn::dense<T>              enc_in;
    std::vector<nn::block<T>> enc;
    nn::layernorm<T>          enc_norm;

    // adapter
    std::array<nn::conv1d<T>, 3> conv;
    std::vector<nn::block<T>>    ad;
    nn::layernorm<T>             ad_norm;
    nn::dense<T>                 ad_out;

    // decoder
    nn::mat<T>                emb;  // total_size x lm_dim
    std::vector<nn::block<T>> lm;
    nn::layernorm<T>          lm_norm;

    // constant position tables (not parameters)
    nn::mat<T> pe_enc, pe_ad, pe_lm;
};

static constexpr int ADAPTER_CONV_STRIDES[3] = { 2, 2, 1 };

// allocate all arrays (zeroed) per cfg; validates the config
template <typename T> void net_setup(net<T> & n, const model_config & cfg);

// setup + seeded scaled-normal init (cfg.init_seed)
template <typename T> void net_init(net<T> & n, const model_config & cfg);

// one view per parameter array, in a frozen order shared by the optimizer,
// the checkpoint container and the initializer
template <typename T>
struct param_view {
    std::string group;  // encoder | adapter | decoder
    std::string name;
    T *         data;
    int64_t     rows;
    int64_t     cols;

    int64_t size() const { return rows * cols; }
};

template <typename T> std::vector<param_view<T>> collect_params(net<T> & n);

template <typename T> int64_t param_count(net<T> & n);
template <typename T> void    zero_all(net<T> & n);       // used on gradient nets
template <typename T> bool    params_finite(net<T> & n);

// ---------------------------------------------------------------------------
// forward / backward (training mode, full sequence)

template <typename T>
struct encoder_state {
    nn::mat<T>                                x;  // raw features
    std::vector<typename nn::block<T>::cache> blocks;
    typename nn::layernorm<T>::cache          out_c;
};

template <typename T>
struct adapter_state {
    std::array<typename nn::conv1d<T>::cache, 3> conv_c;
    std::array<nn::mat<T>, 3>                    conv_h;  // pre-gelu
    std::vector<typename nn::block<T>::cache>    blocks;
    typename nn::layernorm<T>::cache             norm_c;
    nn::mat<T>                                   norm_y;  // input to ad_out
};

// LM input: one entry per position; id >= 0 is a vocabulary token, -1 takes
// the next row of `soft` (continuous speech-slot embeddings from the adapter)
template <typename T>
struct lm_input {
    std::vector<int32_t> tokens;
    nn::mat<T>           soft;
};

template <typename T>
struct lm_train_state {
    std::vector<int32_t>                      tokens;
    std::vector<typename nn::block<T>::cache> blocks;
    typename nn::layernorm<T>::cache          norm_c;
    nn::mat<T>                                hidden;  // post-norm, feeds logits
};

// features (t x C) -> hidden (t x enc_dim)
template <typename T>
nn::mat<T> net_encode(const net<T> & n, const nn::mat<T> & features, encoder_state<T> & st);

template <typename T>
nn::mat<T> net_encode_backward(const net<T> & n, const encoder_state<T> & st,
                               const nn::mat<T> & d_out, net<T> & g);

// hidden (t x enc_dim) -> embeddings (ceil(t/4) x lm_dim)
template <typename T>
nn::mat<T> net_adapt(const net<T> & n, const nn::mat<T> & hidden, adapter_state<T> & st);

template <typename T>
nn::mat<T> net_adapt_backward(const net<T> & n, const adapter_state<T> & st,
                              const nn::mat<T> & d_out, net<T> & g);

// input -> logits (len x total_size)
template <typename T>
nn::mat<T> net_lm(const net<T> & n, const lm_input<T> & in, lm_train_state<T> & st);

// returns gradient w.r.t. the soft rows, in their original order
template <typename T>
nn::mat<T> net_lm_backward(const net<T> & n, const lm_train_state<T> & st,
                           const nn::mat<T> & d_logits, net<T> & g);

// ---------------------------------------------------------------------------
// incremental decoding with a per-layer kv cache

template <typename T>
struct lm_decode_state {
    std::vector<typename nn::block<T>::kv> kv;
    int32_t len = 0;
};

template <typename T> void lm_decode_reset(const net<T> & n, lm_decode_state<T> & st);

// feed any number of positions; returns logits for the fed rows only
template <typename T>
nn::mat<T> lm_decode_feed(const net<T> & n, lm_decode_state<T> & st, const lm_input<T> & in);

// ---------------------------------------------------------------------------
// checkpoint container
//
//   echat-checkpoint 1\n
//   <json manifest: config echo, array table, param_count, payload_hash>\n
//   <little-endian f32 payload, arrays concatenated in collect order>
//
// loaders reconstruct the model from the manifest config and reject payload
// hash mismatches and array-table deviations.

using model = net<float>;

void  write_checkpoint(const std::string & path, model & m);
model read_checkpoint(const std::string & path);

} // namespace echat
