// Fit a 2-D flow to a ring-shaped sample and print log-densities on a grid.
#include <cmath>
#include <cstdio>
#include <numbers>

#include "metarefine/flow/flow.hpp"
#include "metarefine/refine/refine.hpp"
#include "metarefine/rng.hpp"

using namespace metarefine;

int main() {
  Rng rng(11);
  diff::Matrix x(512, 2);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double r = rng.normal(2.0, 0.2);
    x(i, 0) = r * std::cos(a);
    x(i, 1) = r * std::sin(a);
  }
  const auto init = flow::init_flow(2, 6, 32, 11);
  refine::PlainTrainConfig cfg;
  cfg.lr = 5e-3;
  cfg.seed = 11;
  const auto fit = refine::train_epochs(init, x, 60, cfg);
  std::printf("train NLL %.4f -> %.4f\n", flow::nll_loss(init, x), flow::nll_loss(fit.model, x));

  for (double v = 3.0; v >= -3.0; v -= 1.0) {
    for (double u = -3.0; u <= 3.0; u += 1.0) {
      const double p[] = {u, v};
      std::printf("%7.2f", flow::log_prob(fit.model, p));
    }
    std::printf("\n");
  }
}
