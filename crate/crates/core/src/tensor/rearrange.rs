//! einops-style mode rearrangement.
//!
//! A pattern such as `"h n d -> n (h d)"` names every elementary axis once on
//! each side. Parenthesised groups flatten (right side) or split (left side)
//! contiguous axes. Sizes of split axes that cannot be read off the input
//! shape are supplied by name; at most one per group may be inferred.

use std::collections::HashMap;
use std::sync::Arc;

use super::{strides_of, DenseTensor, IndexMap};
use crate::error::{Result, WeaverError};
use crate::scalar::Scalar;

type Groups = Vec<Vec<String>>;

/// A parsed rearrangement pattern, reusable across shapes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rearrangement {
    pattern: String,
    lhs: Groups,
    rhs: Groups,
}

/// A rearrangement resolved against a concrete input shape.
#[derive(Debug, Clone)]
pub struct RearrangePlan {
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    /// `output.data[i] == input.data[index[i]]`
    pub index: IndexMap,
}

impl Rearrangement {
    pub fn parse(pattern: &str) -> Result<Self> {
        let err = |reason: &str| WeaverError::Pattern {
            pattern: pattern.to_string(),
            reason: reason.to_string(),
        };
        let (left, right) = pattern
            .split_once("->")
            .ok_or_else(|| err("missing `->`"))?;
        let lhs = parse_side(left).map_err(|r| err(&r))?;
        let rhs = parse_side(right).map_err(|r| err(&r))?;

        let mut left_names: Vec<&String> = lhs.iter().flatten().collect();
        let mut right_names: Vec<&String> = rhs.iter().flatten().collect();
        let n_left = left_names.len();
        left_names.sort();
        left_names.dedup();
        if left_names.len() != n_left {
            return Err(err("axis repeated on the left"));
        }
        let n_right = right_names.len();
        right_names.sort();
        right_names.dedup();
        if right_names.len() != n_right {
            return Err(err("axis repeated on the right"));
        }
        if left_names != right_names {
            return Err(err("both sides must name the same axes"));
        }
        Ok(Self {
            pattern: pattern.to_string(),
            lhs,
            rhs,
        })
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    /// The pattern with both sides swapped.
    pub fn inverse(&self) -> Self {
        Self {
            pattern: format!("{} -> {}", render(&self.rhs), render(&self.lhs)),
            lhs: self.rhs.clone(),
            rhs: self.lhs.clone(),
        }
    }

    /// Elementary axis sizes implied by `input_shape` and the supplied sizes.
    pub fn axis_sizes(
        &self,
        input_shape: &[usize],
        sizes: &[(&str, usize)],
    ) -> Result<HashMap<String, usize>> {
        let mismatch = || WeaverError::ShapeMismatch {
            op: "rearrange",
            expected: self.lhs.iter().map(|_| 0).collect(),
            got: input_shape.to_vec(),
        };
        if input_shape.len() != self.lhs.len() {
            return Err(WeaverError::Pattern {
                pattern: self.pattern.clone(),
                reason: format!(
                    "left side has {} modes, input has rank {}",
                    self.lhs.len(),
                    input_shape.len()
                ),
            });
        }
        let given: HashMap<&str, usize> = sizes.iter().copied().collect();
        let mut out = HashMap::new();
        for (group, &dim) in self.lhs.iter().zip(input_shape) {
            let mut known = 1usize;
            let mut unknown = None;
            for name in group {
                match given.get(name.as_str()) {
                    Some(&s) if group.len() == 1 && s != dim => return Err(mismatch()),
                    Some(&s) => {
                        known *= s;
                        out.insert(name.clone(), s);
                    }
                    None if group.len() == 1 => {
                        known *= dim;
                        out.insert(name.clone(), dim);
                    }
                    None if unknown.is_some() => {
                        return Err(WeaverError::Pattern {
                            pattern: self.pattern.clone(),
                            reason: format!("cannot infer two sizes in group {group:?}"),
                        })
                    }
                    None => unknown = Some(name.clone()),
                }
            }
            if let Some(name) = unknown {
                if known == 0 || dim % known != 0 {
                    return Err(mismatch());
                }
                out.insert(name, dim / known);
            } else if known != dim {
                return Err(mismatch());
            }
        }
        Ok(out)
    }

    pub fn plan(&self, input_shape: &[usize], sizes: &[(&str, usize)]) -> Result<RearrangePlan> {
        let axis = self.axis_sizes(input_shape, sizes)?;
        if axis.values().any(|&s| s == 0) {
            return Err(WeaverError::shape("rearrange", input_shape, &[]));
        }
        let left_axes: Vec<&String> = self.lhs.iter().flatten().collect();
        let left_sizes: Vec<usize> = left_axes.iter().map(|n| axis[*n]).collect();
        let left_strides = strides_of(&left_sizes);
        let stride_of: HashMap<&String, usize> =
            left_axes.iter().copied().zip(left_strides).collect();

        let right_axes: Vec<&String> = self.rhs.iter().flatten().collect();
        let right_sizes: Vec<usize> = right_axes.iter().map(|n| axis[*n]).collect();
        let right_strides: Vec<usize> = right_axes.iter().map(|n| stride_of[n]).collect();
        let output_shape: Vec<usize> = self
            .rhs
            .iter()
            .map(|g| g.iter().map(|n| axis[n]).product())
            .collect();

        let numel: usize = right_sizes.iter().product();
        let mut index = Vec::with_capacity(numel);
        let mut counter = vec![0usize; right_sizes.len()];
        let mut offset = 0usize;
        for _ in 0..numel {
            index.push(offset);
            for a in (0..right_sizes.len()).rev() {
                counter[a] += 1;
                offset += right_strides[a];
                if counter[a] < right_sizes[a] {
                    break;
                }
                offset -= right_strides[a] * right_sizes[a];
                counter[a] = 0;
            }
        }
        Ok(RearrangePlan {
            input_shape: input_shape.to_vec(),
            output_shape,
            index: Arc::from(index),
        })
    }
}

fn parse_side(side: &str) -> std::result::Result<Groups, String> {
    let mut groups = Vec::new();
    let mut current: Option<Vec<String>> = None;
    let spaced = side.replace('(', " ( ").replace(')', " ) ");
    for tok in spaced.split_whitespace() {
        match tok {
            "(" => {
                if current.is_some() {
                    return Err("nested parentheses".into());
                }
                current = Some(Vec::new());
            }
            ")" => {
                let g = current.take().ok_or("unbalanced `)`")?;
                if g.is_empty() {
                    return Err("empty group".into());
                }
                groups.push(g);
            }
            name => {
                if !name.chars().all(|c| c.is_alphanumeric() || c == '_')
                    || name.starts_with(|c: char| c.is_ascii_digit())
                {
                    return Err(format!("bad axis name `{name}`"));
                }
                match current.as_mut() {
                    Some(g) => g.push(name.to_string()),
                    None => groups.push(vec![name.to_string()]),
                }
            }
        }
    }
    if current.is_some() {
        return Err("unbalanced `(`".into());
    }
    Ok(groups)
}

fn render(groups: &Groups) -> String {
    groups
        .iter()
        .map(|g| {
            if g.len() == 1 {
                g[0].clone()
            } else {
                format!("({})", g.join(" "))
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

impl<T: Scalar> DenseTensor<T> {
    /// Rearranges modes per an einops-style pattern, e.g.
    /// `t.rearrange("p n c -> n (p c)", &[])`.
    pub fn rearrange(&self, pattern: &str, sizes: &[(&str, usize)]) -> Result<Self> {
        let plan = Rearrangement::parse(pattern)?.plan(self.shape(), sizes)?;
        self.gather(&plan.output_shape, &plan.index)
    }

    /// General axis permutation: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let plan = permute_plan(self.shape(), axes)?;
        self.gather(&plan.output_shape, &plan.index)
    }

    /// Swaps the last two modes.
    pub fn transpose_last2(&self) -> Result<Self> {
        let r = self.rank();
        if r < 2 {
            return Err(WeaverError::InvalidAxis {
                op: "transpose_last2",
                axis: 1,
                rank: r,
            });
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }
}

pub(crate) fn permute_plan(shape: &[usize], axes: &[usize]) -> Result<RearrangePlan> {
    let mut seen = vec![false; shape.len()];
    if axes.len() != shape.len() {
        return Err(WeaverError::InvalidArgument(format!(
            "permutation {axes:?} for rank {}",
            shape.len()
        )));
    }
    for &a in axes {
        if a >= shape.len() || seen[a] {
            return Err(WeaverError::InvalidArgument(format!(
                "{axes:?} is not a permutation of 0..{}",
                shape.len()
            )));
        }
        seen[a] = true;
    }
    let strides = strides_of(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let out_strides: Vec<usize> = axes.iter().map(|&a| strides[a]).collect();
    let numel: usize = shape.iter().product();
    let mut index = Vec::with_capacity(numel);
    let mut counter = vec![0usize; out_shape.len()];
    let mut offset = 0usize;
    for _ in 0..numel {
        index.push(offset);
        for a in (0..out_shape.len()).rev() {
            counter[a] += 1;
            offset += out_strides[a];
            if counter[a] < out_shape[a] {
                break;
            }
            offset -= out_strides[a] * out_shape[a];
            counter[a] = 0;
        }
    }
    Ok(RearrangePlan {
        input_shape: shape.to_vec(),
        output_shape: out_shape,
        index: Arc::from(index),
    })
}
