#include "tmpa/grad_check.hpp"

#include <cmath>
#include <sstream>

namespace tmpa {

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "PASS" : "FAIL") << " (tol " << tol << ")\n";
  for (const auto& e : entries) {
    os << "  " << e.name << ": max_rel_err=" << e.max_rel_err;
    if (e.worst_index >= 0)
      os << " at [" << e.worst_index << "] analytic=" << e.analytic << " numeric=" << e.numeric;
    os << "\n";
  }
  return os.str();
}

namespace {

double eval_loss(const GradCheckFn& f, const std::vector<Tensor>& values) {
  Tape tape;
  std::vector<Value> leaves;
  leaves.reserve(values.size());
  for (const auto& v : values) leaves.push_back(tape.leaf(v, false));
  Value loss = f(tape, leaves);
  const Tensor& lv = tape.val(loss);
  TMPA_CHECK(lv.size() == 1, "grad_check target must be scalar");
  return lv[0];
}

}  // namespace

GradCheckReport grad_check(const GradCheckFn& f, std::vector<GradCheckInput> inputs, double h,
                           double tol) {
  GradCheckReport report;
  report.tol = tol;

  // One analytic pass with every input marked differentiable.
  Tape tape;
  std::vector<Value> leaves;
  leaves.reserve(inputs.size());
  for (const auto& in : inputs) leaves.push_back(tape.leaf(in.value, true));
  Value loss = f(tape, leaves);
  TMPA_CHECK(tape.val(loss).size() == 1, "grad_check target must be scalar");
  tape.backward(loss);

  std::vector<Tensor> values;
  values.reserve(inputs.size());
  for (const auto& in : inputs) values.push_back(in.value);

  bool all_ok = true;
  for (size_t i = 0; i < inputs.size(); ++i) {
    GradCheckReport::Entry entry;
    entry.name = inputs[i].name;
    const Tensor& analytic = tape.grad(leaves[i]);
    for (int64_t e = 0; e < values[i].size(); ++e) {
      const double orig = values[i][e];
      values[i][e] = orig + h;
      const double fp = eval_loss(f, values);
      values[i][e] = orig - h;
      const double fm = eval_loss(f, values);
      values[i][e] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[e];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-4});
      const double rel = std::fabs(a - numeric) / denom;
      if (rel > entry.max_rel_err) {
        entry.max_rel_err = rel;
        entry.worst_index = e;
        entry.analytic = a;
        entry.numeric = numeric;
      }
    }
    if (entry.max_rel_err > tol) all_ok = false;
    report.entries.push_back(std::move(entry));
  }
  report.passed = all_ok;
  return report;
}

}  // namespace tmpa
