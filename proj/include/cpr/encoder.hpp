#pragma once

// Recurrent history encoders: an RNN or LSTM trunk consuming [x_prev, a_prev]
// steps, plus a one-hidden-layer head that maps the hidden state to an
// output parameter vector. Optional static contexts are injected into the
// initial hidden state through a learned affine map followed by tanh.

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cpr/autodiff.hpp"
#include "cpr/rng.hpp"
#include "cpr/tensor.hpp"

namespace cpr {

enum class Cell { rnn, lstm };

inline std::string cell_name(Cell c) { return c == Cell::rnn ? "rnn" : "lstm"; }

inline Cell cell_from_name(std::string_view s) {
  if (s == "rnn") return Cell::rnn;
  if (s == "lstm") return Cell::lstm;
  throw std::invalid_argument(detail::str("unknown cell '", s, "'"));
}

struct EncoderConfig {
  Cell cell = Cell::rnn;
  int hidden_dim = 32;  // k
  int obs_dim = 1;      // d
  int static_dim = 0;   // s
  int out_dim = 2;      // emitted parameter count

  int input_dim() const { return obs_dim + 1; }  // [x, a]

  void validate() const {
    if (hidden_dim <= 0 || obs_dim <= 0 || out_dim <= 0 || static_dim < 0)
      throw std::invalid_argument(
          detail::str("encoder config out of range: k=", hidden_dim, " d=", obs_dim,
                      " s=", static_dim, " out=", out_dim));
  }
};

// Ordered, named parameter tensors. Order is the checkpoint order and the
// initialization draw order.
class ParamSet {
 public:
  Tensor& add(std::string name, Tensor t) {
    names_.push_back(std::move(name));
    tensors_.push_back(std::move(t));
    return tensors_.back();
  }

  size_t size() const { return tensors_.size(); }
  const std::string& name(size_t i) const { return names_[i]; }
  Tensor& tensor(size_t i) { return tensors_[i]; }
  const Tensor& tensor(size_t i) const { return tensors_[i]; }

  Tensor& at(std::string_view name) { return tensors_[index_of(name)]; }
  const Tensor& at(std::string_view name) const { return tensors_[index_of(name)]; }

  size_t index_of(std::string_view name) const {
    for (size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return i;
    throw std::invalid_argument(detail::str("no parameter named '", name, "'"));
  }

  bool has(std::string_view name) const {
    for (const auto& n : names_)
      if (n == name) return true;
    return false;
  }

  std::vector<Tensor> snapshot() const { return tensors_; }
  void restore(std::vector<Tensor> snap) {
    if (snap.size() != tensors_.size())
      throw std::invalid_argument("parameter snapshot size mismatch");
    tensors_ = std::move(snap);
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

namespace init {

// uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]
inline Tensor uniform_fan_in(Rng& rng, int rows, int cols, int fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in > 0 ? fan_in : 1));
  Tensor t(rows, cols);
  for (int i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

}  // namespace init

class Encoder {
 public:
  Encoder(EncoderConfig cfg, Rng& init_rng) : cfg_(cfg) { init_params(init_rng); }

  Encoder(EncoderConfig cfg, uint64_t init_seed) : cfg_(cfg) {
    Rng rng = derive_stream(init_seed, "init");
    init_params(rng);
  }

  const EncoderConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  struct State {
    ad::Value h;
    ad::Value c;  // LSTM only
  };

  // Parameters bound to a tape as leaves, with the recurrence built on top.
  // Weight tensors are snapshotted at bind time; mutating the encoder's
  // ParamSet afterwards does not affect an existing Bound.
  class Bound {
   public:
    Bound(const Encoder& enc, ad::Tape& tape) : cfg_(&enc.cfg_), tape_(&tape) {
      const ParamSet& ps = enc.params_;
      leaves_.reserve(ps.size());
      for (size_t i = 0; i < ps.size(); ++i) leaves_.push_back(tape.leaf(ps.tensor(i)));
      auto v = [&](std::string_view n) { return leaves_[ps.index_of(n)]; };
      if (cfg_->static_dim > 0) {
        static_W_ = v("static.W");
        static_b_ = v("static.b");
      }
      if (cfg_->cell == Cell::rnn) {
        W_ = {v("rnn.W")};
        U_ = {v("rnn.U")};
        b_ = {v("rnn.b")};
      } else {
        for (const char* g : {"i", "f", "g", "o"}) {
          W_.push_back(v(detail::str("lstm.W", g)));
          U_.push_back(v(detail::str("lstm.U", g)));
          b_.push_back(v(detail::str("lstm.b", g)));
        }
      }
      head_W1_ = v("head.W1");
      head_b1_ = v("head.b1");
      head_W2_ = v("head.W2");
      head_b2_ = v("head.b2");
    }

    const std::vector<ad::Value>& leaves() const { return leaves_; }
    ad::Tape& tape() const { return *tape_; }
    const EncoderConfig& config() const { return *cfg_; }

    // Initial state before any history step. The LSTM cell state always
    // starts at zero; with static_dim = 0 the hidden state does too.
    State init_state(const std::vector<double>& static_ctx) const {
      State s;
      if (cfg_->static_dim > 0) {
        if (static_cast<int>(static_ctx.size()) != cfg_->static_dim)
          throw std::invalid_argument(detail::str("static context length ", static_ctx.size(),
                                                  " does not match configured dim ",
                                                  cfg_->static_dim));
        ad::Value ctx = tape_->leaf(Tensor::column(static_ctx));
        s.h = ad::tanh(ad::add(ad::matmul(static_W_, ctx), static_b_));
      } else {
        if (!static_ctx.empty())
          throw std::invalid_argument(detail::str("static context of length ", static_ctx.size(),
                                                  " given to an encoder with static_dim=0"));
        s.h = tape_->leaf(Tensor(cfg_->hidden_dim, 1));
      }
      if (cfg_->cell == Cell::lstm) s.c = tape_->leaf(Tensor(cfg_->hidden_dim, 1));
      return s;
    }

    // One recurrence step on an input column of length d+1.
    State step(const State& st, ad::Value input) const {
      if (input.rows() != cfg_->input_dim() || input.cols() != 1)
        throw std::invalid_argument(detail::str("encoder step input is ",
                                                input.val().shape_str(), ", expected ",
                                                cfg_->input_dim(), "x1"));
      if (!input.val().all_finite())
        throw std::invalid_argument("encoder step input contains non-finite values");
      State out;
      if (cfg_->cell == Cell::rnn) {
        out.h = ad::tanh(ad::add(
            ad::add(ad::matmul(W_[0], input), ad::matmul(U_[0], st.h)), b_[0]));
      } else {
        auto gate = [&](int g) {
          return ad::add(ad::add(ad::matmul(W_[g], input), ad::matmul(U_[g], st.h)), b_[g]);
        };
        ad::Value i = ad::sigmoid(gate(0));
        ad::Value f = ad::sigmoid(gate(1));
        ad::Value g = ad::tanh(gate(2));
        ad::Value o = ad::sigmoid(gate(3));
        out.c = ad::add(ad::mul(f, st.c), ad::mul(i, g));
        out.h = ad::mul(o, ad::tanh(out.c));
      }
      return out;
    }

    // out = W2 tanh(W1 h + b1) + b2
    ad::Value emit(const State& st) const {
      ad::Value hidden = ad::tanh(ad::add(ad::matmul(head_W1_, st.h), head_b1_));
      return ad::add(ad::matmul(head_W2_, hidden), head_b2_);
    }

    ad::Value step_input(const std::vector<double>& x, int action) const {
      std::vector<double> in(x);
      in.push_back(static_cast<double>(action));
      return tape_->leaf(Tensor::column(in));
    }

   private:
    const EncoderConfig* cfg_;
    ad::Tape* tape_;
    std::vector<ad::Value> leaves_;
    ad::Value static_W_, static_b_;
    std::vector<ad::Value> W_, U_, b_;  // one entry for RNN, four for LSTM gates
    ad::Value head_W1_, head_b1_, head_W2_, head_b2_;
  };

  Bound bind(ad::Tape& tape) const { return Bound(*this, tape); }

 private:
  void init_params(Rng& rng) {
    cfg_.validate();
    const int k = cfg_.hidden_dim;
    const int in = cfg_.input_dim();
    if (cfg_.static_dim > 0) {
      params_.add("static.W", init::uniform_fan_in(rng, k, cfg_.static_dim, cfg_.static_dim));
      params_.add("static.b", init::uniform_fan_in(rng, k, 1, cfg_.static_dim));
    }
    if (cfg_.cell == Cell::rnn) {
      params_.add("rnn.W", init::uniform_fan_in(rng, k, in, in));
      params_.add("rnn.U", init::uniform_fan_in(rng, k, k, k));
      params_.add("rnn.b", init::uniform_fan_in(rng, k, 1, k));
    } else {
      for (const char* g : {"i", "f", "g", "o"}) {
        params_.add(detail::str("lstm.W", g), init::uniform_fan_in(rng, k, in, in));
        params_.add(detail::str("lstm.U", g), init::uniform_fan_in(rng, k, k, k));
        params_.add(detail::str("lstm.b", g), init::uniform_fan_in(rng, k, 1, k));
      }
    }
    params_.add("head.W1", init::uniform_fan_in(rng, k, k, k));
    params_.add("head.b1", init::uniform_fan_in(rng, k, 1, k));
    params_.add("head.W2", init::uniform_fan_in(rng, cfg_.out_dim, k, k));
    params_.add("head.b2", init::uniform_fan_in(rng, cfg_.out_dim, 1, k));
  }

  EncoderConfig cfg_;
  ParamSet params_;
};

}  // namespace cpr
