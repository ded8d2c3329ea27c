//! Scaled dot-product heads, word-context convolution heads, and the hybrid
//! multi-head combiner.

mod complexity;
mod heads;
mod multihead;

pub use complexity::{complexity_estimate, Complexity, LayerType};
pub use heads::{
    adaptive_query, adaptive_query_heads, dynamic_conv_head, dynamic_conv_heads, local_conv, normalized_kernel,
    scaled_dot_product_attention, scaled_dot_product_attention_weights, AttentionMask, ConvHeadOutput,
};
pub use multihead::{
    multi_head_forward, multi_head_forward_traced, AttentionTrace, ConvHeadParams, MultiHeadParams, SelfHeadParams,
};
