#include "mosaic/gradcheck.hpp"
#include "mosaic/tensor.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace mosaic;

namespace {

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.begin()->size()));
  Index i = 0;
  for (const auto& r : rows) {
    Index j = 0;
    for (double x : r) m(i, j++) = x;
    ++i;
  }
  return m;
}

Parameter random_param(const std::string& name, Index r, Index c, std::uint64_t seed) {
  Rng rng(seed, 1);
  return Parameter(name, rng.normal_matrix(r, c));
}

GradCheckReport check(const ScalarFunction<double>& f, std::vector<Parameter*> params) {
  return finite_difference_check<double>(f, params);
}

}  // namespace

TEST(Matmul, IdentityAndDot) {
  Tape t;
  EXPECT_EQ(matmul(t.constant(mat({{1, 0}, {0, 1}})), t.constant(mat({{3, 4}, {5, 6}}))).value(),
            mat({{3, 4}, {5, 6}}));
  EXPECT_EQ(matmul(t.constant(mat({{1, 2}})), t.constant(mat({{3}, {4}}))).item(), 11.0);
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(3);
  const Matrix a = rng.normal_matrix(4, 5), b = rng.normal_matrix(5, 3);
  Tape t;
  const Matrix got = matmul(t.constant(a), t.constant(b)).value();
  const Matrix want = oracle::matmul(a, b);
  EXPECT_LE((got - want).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
  Tape t;
  try {
    matmul(t.constant(Matrix::Zero(2, 3)), t.constant(Matrix::Zero(2, 3)));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2, 3] x [2, 3]"), std::string::npos) << msg;
  }
}

TEST(Softmax, Examples) {
  Tape t;
  const Matrix u = softmax_rows(t.constant(mat({{0, 0, 0, 0}}))).value();
  for (Index j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(u(0, j), 0.25);

  const Matrix big = softmax_rows(t.constant(mat({{1000, 0}}))).value();
  EXPECT_TRUE(big.allFinite());
  EXPECT_NEAR(big(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(big(0, 1), 0.0, 1e-15);

  const Matrix l = softmax_rows(t.constant(mat({{std::log(2.0), std::log(1.0)}}))).value();
  EXPECT_NEAR(l(0, 0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(l(0, 1), 1.0 / 3.0, 1e-15);
}

TEST(Softmax, RowsSumToOneProperty) {
  std::mt19937_64 gen(11);
  std::uniform_int_distribution<int> dim(1, 12);
  std::uniform_real_distribution<double> sc(0.1, 300.0);
  for (int trial = 0; trial < 200; ++trial) {
    Rng rng(static_cast<std::uint64_t>(trial));
    const Matrix x = rng.normal_matrix(dim(gen), dim(gen), sc(gen));
    Tape t;
    const Matrix y = softmax_rows(t.constant(x)).value();
    for (Index i = 0; i < y.rows(); ++i) ASSERT_NEAR(y.row(i).sum(), 1.0, 1e-12);
    ASSERT_LE((y - oracle::softmax_rows(x)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Softmax, CrossEntropyClosedForm) {
  Parameter x = random_param("x", 1, 5, 4);
  Tape t;
  const Var p = softmax_rows(t.parameter(x));
  const Var loss = scale(log_floor(gather_cells(p, {{0, 2}}), 1e-12), -1.0);
  t.backward(loss);
  EXPECT_LE((x.grad - softmax_cross_entropy_grad(x.value, 2)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Backward, SumGivesOnes) {
  Parameter x = random_param("x", 3, 4, 1);
  Tape t;
  t.backward(sum(t.parameter(x)));
  EXPECT_EQ(x.grad, Matrix::Ones(3, 4));
}

TEST(Backward, HalfSquareGivesX) {
  Parameter x = random_param("x", 2, 5, 2);
  Tape t;
  const Var v = t.parameter(x);
  t.backward(scale(sum(hadamard(v, v)), 0.5));
  EXPECT_LE((x.grad - x.value).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Backward, Contracts) {
  Parameter x = random_param("x", 2, 2, 3);
  Tape t;
  const Var v = t.parameter(x);
  EXPECT_THROW(t.backward(v), ContractError);
  const Var s = sum(v);
  t.backward(s);
  EXPECT_THROW(t.backward(s), ContractError);
}

TEST(Backward, GradientsAccumulateAcrossTapes) {
  Parameter x = random_param("x", 1, 3, 5);
  for (int i = 0; i < 2; ++i) {
    Tape t;
    t.backward(sum(t.parameter(x)));
  }
  EXPECT_EQ(x.grad, Matrix::Constant(1, 3, 2.0));
}

TEST(GradCheck, SumOfSquares) {
  std::vector<Parameter> ps;
  for (int i = 0; i < 10; ++i) ps.push_back(random_param("p" + std::to_string(i), 1, 1, 100 + i));
  std::vector<Parameter*> ptrs;
  for (auto& p : ps) ptrs.push_back(&p);
  auto f = [&](Tape& t) {
    std::vector<Var> vs;
    for (auto& p : ps) vs.push_back(t.parameter(p));
    const Var all = concat_rows(std::span<const Var>(vs));
    return sum(hadamard(all, all));
  };
  EXPECT_LT(check(f, ptrs).max_rel_error, 1e-7);
}

TEST(GradCheck, ConstantFunction) {
  Parameter p = random_param("p", 2, 2, 9);
  auto f = [](Tape& t) { return t.constant(Matrix::Constant(1, 1, 3.0)); };
  const auto r = check(f, {&p});
  EXPECT_EQ(r.max_rel_error, 0.0);
  EXPECT_EQ(r.elements_checked, 4);
}

TEST(GradCheck, NonDeterministicFunctionIsRejected) {
  Parameter p = random_param("p", 1, 1, 9);
  int calls = 0;
  auto f = [&](Tape& t) { return t.constant(Matrix::Constant(1, 1, static_cast<double>(calls++))); };
  EXPECT_THROW(check(f, {&p}), OracleViolation);
}

TEST(GradCheck, TamperIsCaught) {
  Parameter p = random_param("p", 2, 2, 9);
  auto f = [&](Tape& t) {
    const Var v = t.parameter(p);
    return sum(hadamard(v, v));
  };
  GradCheckOptions opt;
  opt.tamper = [](std::span<Parameter* const> ps) { ps.front()->grad(0, 0) += 1.0; };
  std::vector<Parameter*> ptrs{&p};
  const auto r = finite_difference_check<double>(f, ptrs, opt);
  EXPECT_GT(r.max_rel_error, 0.1);
  EXPECT_EQ(r.worst_parameter, "p");
  EXPECT_EQ(r.worst_element, 0);
}

// Every differentiable op, checked against central differences.
TEST(GradCheck, EveryOp) {
  Parameter a = random_param("a", 3, 4, 21), b = random_param("b", 4, 4, 22), r = random_param("r", 1, 4, 23);
  Parameter c = random_param("c", 3, 4, 24);
  std::vector<Parameter*> ptrs{&a, &b, &r, &c};
  Matrix cosm(3, 2), sinm(3, 2);
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 2; ++j) {
      cosm(i, j) = std::cos(0.3 * static_cast<double>(i + 2 * j + 1));
      sinm(i, j) = std::sin(0.3 * static_cast<double>(i + 2 * j + 1));
    }
  }
  const std::vector<std::pair<std::string, std::function<Var(Tape&)>>> cases = {
      {"matmul", [&](Tape& t) { return sum(hadamard(matmul(t.parameter(a), t.parameter(b)), t.parameter(c))); }},
      {"transpose", [&](Tape& t) { return sum(matmul(transpose(t.parameter(a)), t.parameter(c))); }},
      {"add_sub", [&](Tape& t) {
         const Var d = sub(add(t.parameter(a), t.parameter(c)), scale(t.parameter(c), 3.0));
         return sum(hadamard(d, d));
       }},
      {"add_row", [&](Tape& t) {
         const Var d = add_row(t.parameter(a), t.parameter(r));
         return sum(hadamard(d, d));
       }},
      {"mean_rows", [&](Tape& t) {
         const Var m = mean_rows(hadamard(t.parameter(a), t.parameter(c)));
         return mean(hadamard(m, m));
       }},
      {"softmax", [&](Tape& t) { return sum(hadamard(softmax_rows(t.parameter(a)), t.parameter(c))); }},
      {"normalize_l1", [&](Tape& t) {
         const Var pos = softmax_rows(t.parameter(a));
         return sum(hadamard(normalize_l1_rows(scale(pos, 2.5)), t.parameter(c)));
       }},
      {"log_floor", [&](Tape& t) { return sum(log_floor(softmax_rows(t.parameter(a)), 1e-12)); }},
      {"gelu", [&](Tape& t) { return sum(hadamard(gelu(t.parameter(a)), t.parameter(c))); }},
      {"rms_norm", [&](Tape& t) { return sum(hadamard(rms_norm_rows(t.parameter(a)), t.parameter(c))); }},
      {"slices", [&](Tape& t) {
         const Var s = slice_cols(slice_rows(t.parameter(a), 1, 2), 1, 3);
         return sum(hadamard(s, s));
       }},
      {"concat", [&](Tape& t) {
         const Var rows = concat_rows({t.parameter(a), t.parameter(r)});
         const Var cols = concat_cols({t.parameter(a), t.parameter(c)});
         return add(sum(hadamard(rows, rows)), sum(hadamard(cols, cols)));
       }},
      {"gather", [&](Tape& t) {
         const Var g = gather_rows(t.parameter(a), {2, 0, 2});
         const Var cells = gather_cells(t.parameter(c), {{0, 1}, {2, 3}, {0, 1}});
         return add(sum(hadamard(g, g)), sum(hadamard(cells, cells)));
       }},
      {"rotate_pairs", [&](Tape& t) {
         return sum(hadamard(rotate_pairs(t.parameter(a), cosm, sinm), t.parameter(c)));
       }},
  };
  for (const auto& [name, fn] : cases) {
    ScalarFunction<double> f = fn;
    EXPECT_LT(check(f, ptrs).max_rel_error, 1e-7) << name;
  }
}

TEST(GradCheck, DetachBlocksGradient) {
  Parameter a = random_param("a", 2, 2, 1);
  Tape t;
  t.backward(sum(detach(t.parameter(a))));
  EXPECT_EQ(a.grad, Matrix::Zero(2, 2));
}

TEST(Ops, GatherCellsAndFloor) {
  Tape t;
  const Var x = t.constant(mat({{0.5, 0.0}, {0.25, 1.0}}));
  const Matrix g = gather_cells(x, {{1, 0}, {0, 0}}).value();
  EXPECT_EQ(g, mat({{0.25}, {0.5}}));
  const Matrix l = log_floor(x, 1e-12).value();
  EXPECT_DOUBLE_EQ(l(0, 1), std::log(1e-12));
}
