#pragma once

// Vectorized 3x3 / stride-1 / pad-1 / groups-1 convolution kernels used as a
// fast path by Graph::conv2d. Every routine falls back gracefully: callers
// must check conv3x3_available() and use the generic im2col path otherwise.

namespace enclab::detail {

// True when the CPU supports the instruction set these kernels are built for.
bool conv3x3_available();

// y = conv3x3(x, w) + b for NCHW input x of n images, c_in channels, h x wd
// spatial size (output spatial size equals input: stride 1, pad 1).
// w is [c_out, c_in, 3, 3]; b is [c_out] and may be null (treated as zero).
// When accumulate is true the result is added onto y instead of overwriting.
void conv3x3_forward(const float* x, const float* w, const float* b, float* y,
                     int n, int c_in, int c_out, int h, int wd, bool accumulate);

// Accumulates dw += dConv/dW and db += dConv/db given upstream gradient dy.
// db may be null to skip the bias gradient.
void conv3x3_grad_w(const float* x, const float* dy, float* dw, float* db,
                    int n, int c_in, int c_out, int h, int wd);

// Accumulates dx += dConv/dX. Internally a forward pass of dy against the
// flipped, channel-transposed weights.
void conv3x3_grad_x(const float* w, const float* dy, float* dx,
                    int n, int c_in, int c_out, int h, int wd);

}  // namespace enclab::detail
