#pragma once

// Internal batched LSTM kernels. Sequences are laid out time-major with
// column t * batch + b; `valid` marks real (non-padding) columns.

#include <array>
#include <vector>

#include "codepoison/model.hpp"

namespace codepoison::detail {

struct LayerTrace {
  Eigen::MatrixXd x;      // d_in x T*B
  Eigen::MatrixXd gates;  // 4h x T*B, post-activation
  Eigen::MatrixXd c;      // h x T*B
  Eigen::MatrixXd h;      // h x T*B
  Eigen::MatrixXd h0;
  Eigen::MatrixXd c0;
};

struct LayerGrad {
  Eigen::MatrixXd dx;
  Eigen::MatrixXd dh0;
  Eigen::MatrixXd dc0;
};

// Padding columns copy the previous state through unchanged.
void run_layer(const LstmLayer& layer, const Eigen::MatrixXd& x, std::size_t steps, std::size_t batch,
               const Eigen::MatrixXd& h0, const Eigen::MatrixXd& c0, const std::vector<char>* valid,
               LayerTrace& tr);

void backprop_layer(const LstmLayer& layer, const LayerTrace& tr, std::size_t steps, std::size_t batch,
                    const Eigen::MatrixXd* d_out, Eigen::MatrixXd dh_next, Eigen::MatrixXd dc_next,
                    const std::vector<char>* valid, LstmLayer* grad, LayerGrad& out);

struct EncoderTrace {
  std::size_t steps = 0;
  std::size_t batch = 0;
  std::vector<char> valid;
  std::array<LayerTrace, kLayers> layers;
  std::array<Eigen::MatrixXd, kLayers> final_h;
  std::array<Eigen::MatrixXd, kLayers> final_c;
};

Eigen::MatrixXd embed(const Eigen::MatrixXd& embedding, const std::vector<std::int32_t>& ids);
void accumulate_embedding(Eigen::MatrixXd& grad, const std::vector<std::int32_t>& ids, const Eigen::MatrixXd& dx);

void run_encoder(const Weights& w, const Eigen::MatrixXd& x0, std::size_t steps, std::size_t batch,
                 const std::vector<char>& valid, EncoderTrace& tr);
void backprop_encoder(const Weights& w, const EncoderTrace& tr, const std::array<Eigen::MatrixXd, kLayers>& dh_final,
                      const std::array<Eigen::MatrixXd, kLayers>& dc_final, Weights* grad, Eigen::MatrixXd* dx0);

// Mean NLL over scored columns. With grad or dh0 set, backpropagates
// scale * mean loss.
double run_decoder(const Weights& w, const std::vector<std::int32_t>& in_ids, std::size_t steps, std::size_t batch,
                   const std::vector<std::int32_t>& targets, const std::vector<char>& scored,
                   const std::array<Eigen::MatrixXd, kLayers>& h0, const std::array<Eigen::MatrixXd, kLayers>& c0,
                   double scale, Weights* grad, std::array<Eigen::MatrixXd, kLayers>* dh0,
                   std::array<Eigen::MatrixXd, kLayers>* dc0, Eigen::MatrixXd* logits_out,
                   std::vector<double>* per_column_nll);

}  // namespace codepoison::detail
