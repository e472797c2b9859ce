//! Differentiable kernels. Each forward has a hand-derived backward
//! companion; callers compose them explicitly (there is no tape).

pub mod activation;
pub mod conv;
pub mod linalg;
pub mod norm;
pub mod pool;

pub use activation::{
    add, add_backward, channel_sum, mul, mul_backward, relu, relu_backward, sigmoid,
    sigmoid_backward, softmax_rows, softmax_rows_backward,
};
pub use conv::{conv2d, conv2d_backward, ConvGrads};
pub use linalg::{matmul, matmul_backward, matmul_nt, matmul_tn};
pub use norm::{
    batchnorm2d, batchnorm2d_backward, l2_normalize_rows, BatchNormCache, BatchNormGrads,
    BatchNormState, Mode,
};
pub use pool::{
    global_avg_pool, global_avg_pool_backward, topk_indices, topk_mean_pool, topk_pool,
    topk_pool_backward, TopKAggregate,
};
