#pragma once

namespace bhpeft_cli {

/// Runs the built-in analytic oracle battery (closed-form KL vs quadrature,
/// tape gradients vs finite differences, kernel anchors, sampler moments).
/// Prints one line per check; returns 0 when everything passes.
int run_selfcheck();

}  // namespace bhpeft_cli
