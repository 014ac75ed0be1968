// Central finite-difference gradient check for the message-passing network.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "torml/lamp.hpp"

namespace gradcheck {

struct Result {
  double max_rel_error = 0.0;
  std::string worst_param;
  int checked = 0;
};

inline torml::lamp::Network tiny_network(int n_labels = 3, int n_features = 3,
                                         int d_model = 8, int rounds = 1) {
  torml::lamp::NetConfig c;
  c.d_model = d_model;
  c.d_hidden = 2 * d_model;
  c.heads = 2;
  c.rounds = rounds;
  c.dropout = 0.0;
  c.n_labels = n_labels;
  c.n_features = n_features;
  c.vocab_rows = 6;
  torml::lamp::Network net(c, /*seed=*/99);
  // A non-trivial mask: label 2 isolated, labels 0 and 1 connected.
  std::vector<std::vector<bool>> mask(n_labels,
                                      std::vector<bool>(n_labels, false));
  if (n_labels >= 2) {
    mask[0][1] = mask[1][0] = true;
  }
  net.set_label_mask(mask);
  return net;
}

/// Compares analytic gradients with central differences for every entry of
/// every parameter tensor.
inline Result run(torml::lamp::Network& net, const std::vector<int>& tokens,
                  const torml::LabelSet& y, double eps = 1e-5) {
  using torml::lamp::Network;
  torml::lamp::Network::Trace trace;

  auto loss_at = [&]() {
    Network::Trace t;
    return Network::bce_loss(net.forward(tokens, t), y);
  };

  auto grads = net.like_params();
  net.forward(tokens, trace);
  net.backward(trace, y, grads);
  auto grefs = torml::lamp::Adam::grad_refs(grads);
  auto prefs = net.param_refs();

  Result result;
  for (std::size_t p = 0; p < prefs.size(); ++p) {
    auto& value = prefs[p].value->v;
    auto& grad = grefs[p]->v;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double keep = value[i];
      value[i] = keep + eps;
      const double up = loss_at();
      value[i] = keep - eps;
      const double down = loss_at();
      value[i] = keep;
      const double numeric = (up - down) / (2 * eps);
      const double rel = std::abs(grad[i] - numeric) /
                         std::max({1.0, std::abs(grad[i]), std::abs(numeric)});
      ++result.checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = prefs[p].name;
      }
    }
  }
  return result;
}

}  // namespace gradcheck
