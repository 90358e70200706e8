#pragma once

// A 2x2 tiny_conv with 1x1 kernels whose forward pass is worked by hand:
//
//   image  R = [[1,2],[3,4]]  G = [[0,1],[0,1]]  B = [[1,1],[1,1]]
//   conv1  ch0 = R,  ch1 = ReLU(G - B) = 0
//   conv2  ReLU(0.5*ch0 + 2*ch1 - 1) = [[0,0],[0.5,1]]   (mean 0.375)
//   f      2 * 0.375 + 0.25 = 1.0

#include <torch/torch.h>

#include "streetcam/ranking_model.hpp"

namespace streetcam::fixtures {

inline ScoringModel hand_model() {
  BackboneConfig config;
  config.kind = BackboneKind::tiny_conv;
  config.input_side = 2;
  config.tiny = {2, 1, 1};
  ScoringModel model(config, PerceptualAttribute::depressing, 0);
  model.to(torch::kDouble);
  auto& tiny = dynamic_cast<TinyConv&>(model.backbone());
  torch::NoGradGuard no_grad;
  auto opts = torch::TensorOptions().dtype(torch::kDouble);
  tiny.conv1->weight.copy_(torch::tensor({1.0, 0.0, 0.0, 0.0, 1.0, -1.0}, opts).view({2, 3, 1, 1}));
  tiny.conv1->bias.zero_();
  tiny.conv2->weight.copy_(torch::tensor({0.5, 2.0}, opts).view({1, 2, 1, 1}));
  tiny.conv2->bias.fill_(-1.0);
  tiny.head_linear()->weight.fill_(2.0);
  tiny.head_linear()->bias.fill_(0.25);
  return model;
}

inline torch::Tensor hand_image() {
  return torch::tensor({1.0, 2.0, 3.0, 4.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0}, torch::kDouble)
      .view({3, 2, 2});
}

}  // namespace streetcam::fixtures
