/**
 * Least-squares fitting of the engine's affine mapper: find W (out x in)
 * and b (out) minimizing sum_i ||W x_i + b - y_i||^2.
 *
 * Solved via the normal equations on the bias-augmented design matrix.
 * A rank-deficient system triggers a warning and a ridge-regularized
 * re-solve instead of failing.
 */

export interface AffineFit {
  weight: Float64Array; // out * in, row-major
  bias: Float64Array;
  regularized: boolean;
}

/** Solve A X = B in place for symmetric positive semi-definite A (n x n),
 * B (n x m).  Returns null when a pivot collapses (rank deficiency). */
function solveGaussian(a: Float64Array, b: Float64Array, n: number, m: number): Float64Array | null {
  const lhs = Float64Array.from(a);
  const rhs = Float64Array.from(b);
  let scale = 0;
  for (let i = 0; i < n; i++) scale = Math.max(scale, Math.abs(lhs[i * n + i]));
  const tol = Math.max(scale, 1) * n * 1e-12;
  for (let col = 0; col < n; col++) {
    let pivot = col;
    for (let row = col + 1; row < n; row++) {
      if (Math.abs(lhs[row * n + col]) > Math.abs(lhs[pivot * n + col])) pivot = row;
    }
    if (Math.abs(lhs[pivot * n + col]) <= tol) return null;
    if (pivot !== col) {
      for (let j = 0; j < n; j++) {
        const t = lhs[col * n + j];
        lhs[col * n + j] = lhs[pivot * n + j];
        lhs[pivot * n + j] = t;
      }
      for (let j = 0; j < m; j++) {
        const t = rhs[col * m + j];
        rhs[col * m + j] = rhs[pivot * m + j];
        rhs[pivot * m + j] = t;
      }
    }
    const inv = 1 / lhs[col * n + col];
    for (let row = 0; row < n; row++) {
      if (row === col) continue;
      const factor = lhs[row * n + col] * inv;
      if (factor === 0) continue;
      for (let j = col; j < n; j++) lhs[row * n + j] -= factor * lhs[col * n + j];
      for (let j = 0; j < m; j++) rhs[row * m + j] -= factor * rhs[col * m + j];
    }
  }
  for (let i = 0; i < n; i++) {
    const inv = 1 / lhs[i * n + i];
    for (let j = 0; j < m; j++) rhs[i * m + j] *= inv;
  }
  return rhs;
}

export function fitAffine(
  inputs: ArrayLike<number>[],
  targets: ArrayLike<number>[],
  onWarning: (message: string) => void = (m) => console.warn(m),
): AffineFit {
  const n = inputs.length;
  if (n === 0 || n !== targets.length) {
    throw new Error(`need matching non-empty inputs/targets, got ${n}/${targets.length}`);
  }
  const inDim = inputs[0].length;
  const outDim = targets[0].length;
  const d = inDim + 1; // bias column

  // gram = X~^T X~,  moment = X~^T Y  with X~ = [X | 1]
  const gram = new Float64Array(d * d);
  const moment = new Float64Array(d * outDim);
  for (let r = 0; r < n; r++) {
    const x = inputs[r];
    const y = targets[r];
    if (x.length !== inDim || y.length !== outDim) {
      throw new Error(`row ${r}: inconsistent dimensions`);
    }
    for (let i = 0; i < d; i++) {
      const xi = i < inDim ? x[i] : 1;
      for (let j = i; j < d; j++) {
        gram[i * d + j] += xi * (j < inDim ? x[j] : 1);
      }
      for (let j = 0; j < outDim; j++) moment[i * outDim + j] += xi * y[j];
    }
  }
  for (let i = 0; i < d; i++) {
    for (let j = 0; j < i; j++) gram[i * d + j] = gram[j * d + i];
  }

  let regularized = false;
  let solution = solveGaussian(gram, moment, d, outDim);
  if (solution === null) {
    regularized = true;
    onWarning("rank-deficient least-squares system; applying ridge regularization");
    let trace = 0;
    for (let i = 0; i < d; i++) trace += gram[i * d + i];
    const ridge = Math.max(trace / d, 1) * 1e-8;
    const damped = Float64Array.from(gram);
    for (let i = 0; i < d; i++) damped[i * d + i] += ridge;
    solution = solveGaussian(damped, moment, d, outDim);
    if (solution === null) throw new Error("regularized solve failed");
  }

  // solution rows 0..inDim-1 are W^T, the last row is b
  const weight = new Float64Array(outDim * inDim);
  const bias = new Float64Array(outDim);
  for (let j = 0; j < outDim; j++) {
    for (let i = 0; i < inDim; i++) weight[j * inDim + i] = solution[i * outDim + j];
    bias[j] = solution[inDim * outDim + j];
  }
  return { weight, bias, regularized };
}

export function applyAffine(fit: { weight: ArrayLike<number>; bias: ArrayLike<number> },
                            inDim: number, outDim: number,
                            x: ArrayLike<number>): Float64Array {
  const out = new Float64Array(outDim);
  for (let j = 0; j < outDim; j++) {
    let acc = fit.bias[j];
    for (let i = 0; i < inDim; i++) acc += fit.weight[j * inDim + i] * x[i];
    out[j] = acc;
  }
  return out;
}
