#pragma once

#include <string>
#include <vector>

#include "wnlab/data.hpp"
#include "wnlab/graph.hpp"
#include "wnlab/optim.hpp"
#include "wnlab/rng.hpp"
#include "wnlab/tensor.hpp"

namespace wnlab {

struct LayerDesc {
  enum class Kind { Conv3x3, Relu, AvgPool2, Flatten, Dense };
  Kind kind;
  int width = 0;  // output channels (conv) or output units (dense)
};

// DNN block -> buffer (dense + ReLU) -> {linear head, WNLL head}.
struct NetworkSpec {
  std::string name;
  int in_c = 1, in_h = 1, in_w = 1;
  std::vector<LayerDesc> dnn_layers;
  int feature_dim = 0;
  int num_classes = 0;

  // conv3x3(8)-relu-pool-conv3x3(16)-relu-pool-flatten-dense(64) + buffer
  static NetworkSpec tiny_cnn(int c, int h, int w, int m);
  // flatten-dense(hidden)-relu-dense(feature_dim) + buffer, for flat data
  static NetworkSpec mlp(int in_dim, int hidden, int feature_dim, int m);
};

struct TwoBranchModel {
  NetworkSpec spec;
  ParamStore theta;     // DNN block
  ParamStore w_buffer;  // buffer block
  ParamStore w_linear;  // linear head

  static TwoBranchModel init(const NetworkSpec& spec, Rng& rng);
};

struct ForwardTrace {
  Tensor x_tilde;  // DNN block output
  Tensor x_hat;    // buffer output, the shared feature
  Tensor logits;
  Tensor y_tilde;           // softmax prediction
  Eigen::MatrixXd y_hat;    // WNLL prediction rows for the query batch
  bool has_y_hat = false;
};

// Linear branch only; x shaped (N, c, h, w) per the network spec.
ForwardTrace forward_linear(const TwoBranchModel& model, const Tensor& x);

// Joint features over X and the template images, graph over the combined
// cloud, WNLL interpolation; y_hat holds the rows for X.
ForwardTrace forward_wnll(const TwoBranchModel& model, const Tensor& x,
                          const Dataset& tpl, int k = 15);

// Cross-entropy on u clamped to [1e-12, 1] and row-renormalized.
double wnll_loss_value(const Eigen::MatrixXd& y_hat, const std::vector<int>& labels);

// Straight-through step: backprop the linear branch with the WNLL
// loss value substituted for the linear loss, then update W_B only.
void straight_through_update(TwoBranchModel& model, const Tensor& x,
                             const std::vector<int>& labels, const Dataset& tpl,
                             double lr, int k = 15);

std::vector<int> predict_linear(const TwoBranchModel& model, const Dataset& data,
                                long batch_size = 256);
std::vector<int> predict_wnll(const TwoBranchModel& model, const Dataset& data,
                              const Dataset& tpl, int k = 15, long batch_size = 256);

double accuracy(const std::vector<int>& pred, const std::vector<int>& truth);

}  // namespace wnlab
