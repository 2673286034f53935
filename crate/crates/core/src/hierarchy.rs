//! Part/whole levels from coverage relations between masks.
//!
//! Mask `b` covers mask `a` when, for a coverage percentage `θ`:
//! more than `θ%` of `a` lies inside `b`, less than `θ%` of `b` lies inside
//! `a`, and `b` has the smallest area among all masks meeting both conditions
//! for `a` (ties go to the lower index). Each mask's covering mask is its
//! parent; roots are whole objects, their children parts, deeper nodes subparts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rle::RleMask;

pub const DEFAULT_COVER_PERCENT: f64 = 90.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HierLevel {
    Whole,
    Part,
    Subpart,
}

impl HierLevel {
    pub const ALL: [HierLevel; 3] = [HierLevel::Whole, HierLevel::Part, HierLevel::Subpart];

    pub fn from_depth(depth: usize) -> Self {
        match depth {
            0 => HierLevel::Whole,
            1 => HierLevel::Part,
            _ => HierLevel::Subpart,
        }
    }

    /// Category id used in annotation files: 1 whole, 2 part, 3 subpart.
    pub fn category_id(self) -> u64 {
        match self {
            HierLevel::Whole => 1,
            HierLevel::Part => 2,
            HierLevel::Subpart => 3,
        }
    }

    pub fn from_category_id(id: u64) -> Option<Self> {
        match id {
            1 => Some(HierLevel::Whole),
            2 => Some(HierLevel::Part),
            3 => Some(HierLevel::Subpart),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HierLevel::Whole => "whole",
            HierLevel::Part => "part",
            HierLevel::Subpart => "subpart",
        }
    }
}

impl std::str::FromStr for HierLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "whole" | "1" => Ok(HierLevel::Whole),
            "part" | "2" => Ok(HierLevel::Part),
            "subpart" | "3" => Ok(HierLevel::Subpart),
            other => Err(Error::InvalidConfig(format!("unknown level {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyForest {
    pub parent: Vec<Option<usize>>,
    pub level: Vec<HierLevel>,
    pub cover_percent: f64,
}

impl HierarchyForest {
    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn roots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.parent[i].is_none())
    }

    pub fn children(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| self.parent[i] == Some(node))
    }

    /// Distance to the root, or `CyclicCoverage` if the parent chain loops.
    pub fn depth(&self, node: usize) -> Result<usize> {
        let mut depth = 0;
        let mut cur = node;
        while let Some(p) = self.parent[cur] {
            depth += 1;
            if depth > self.len() {
                return Err(Error::CyclicCoverage { node });
            }
            cur = p;
        }
        Ok(depth)
    }
}

fn meets_coverage(inter: u64, area_a: u64, area_b: u64, cover_percent: f64) -> bool {
    let inter = inter as f64 * 100.0;
    inter > cover_percent * area_a as f64 && inter < cover_percent * area_b as f64
}

/// Pairwise intersection areas, `table[i][j] = |m_i ∩ m_j|`.
fn intersection_table<M: AsRef<RleMask> + Sync>(masks: &[M]) -> Result<Vec<Vec<u64>>> {
    masks
        .par_iter()
        .map(|a| {
            masks
                .iter()
                .map(|b| a.as_ref().intersection_area(b.as_ref()))
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

fn parent_from_table<M: AsRef<RleMask>>(a: usize, masks: &[M], table: &[Vec<u64>], cover_percent: f64) -> Option<usize> {
    let area_a = masks[a].as_ref().area();
    (0..masks.len())
        .filter(|&b| b != a)
        .filter(|&b| meets_coverage(table[a][b], area_a, masks[b].as_ref().area(), cover_percent))
        .min_by_key(|&b| (masks[b].as_ref().area(), b))
}

/// Index of the mask covering `masks[a]`, if any.
pub fn covering_mask<M: AsRef<RleMask>>(a: usize, masks: &[M], cover_percent: f64) -> Result<Option<usize>> {
    let ma = masks[a].as_ref();
    let mut best: Option<(u64, usize)> = None;
    for (b, mb) in masks.iter().enumerate() {
        if b == a {
            continue;
        }
        let mb = mb.as_ref();
        let inter = ma.intersection_area(mb)?;
        if meets_coverage(inter, ma.area(), mb.area(), cover_percent)
            && best.is_none_or(|(area, _)| mb.area() < area)
        {
            best = Some((mb.area(), b));
        }
    }
    Ok(best.map(|(_, b)| b))
}

/// Whether `masks[b]` covers `masks[a]` among all `masks`.
pub fn covers<M: AsRef<RleMask>>(a: usize, b: usize, masks: &[M], cover_percent: f64) -> Result<bool> {
    Ok(covering_mask(a, masks, cover_percent)? == Some(b))
}

/// Links every mask to its covering mask and assigns levels by depth.
pub fn build_forest<M: AsRef<RleMask> + Sync>(masks: &[M], cover_percent: f64) -> Result<HierarchyForest> {
    let table = intersection_table(masks)?;
    let parent: Vec<Option<usize>> = (0..masks.len())
        .map(|a| parent_from_table(a, masks, &table, cover_percent))
        .collect();
    let mut forest = HierarchyForest {
        parent,
        level: Vec::new(),
        cover_percent,
    };
    forest.level = (0..forest.len())
        .map(|i| forest.depth(i).map(HierLevel::from_depth))
        .collect::<Result<_>>()?;
    Ok(forest)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelCounts {
    pub whole: usize,
    pub part: usize,
    pub subpart: usize,
}

impl LevelCounts {
    pub fn total(&self) -> usize {
        self.whole + self.part + self.subpart
    }

    pub fn add(&mut self, level: HierLevel) {
        match level {
            HierLevel::Whole => self.whole += 1,
            HierLevel::Part => self.part += 1,
            HierLevel::Subpart => self.subpart += 1,
        }
    }

    /// Fractions per level; all zero for an empty forest.
    pub fn fractions(&self) -> [f64; 3] {
        let t = self.total();
        if t == 0 {
            return [0.0; 3];
        }
        let t = t as f64;
        [self.whole as f64 / t, self.part as f64 / t, self.subpart as f64 / t]
    }
}

impl std::ops::AddAssign for LevelCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.whole += rhs.whole;
        self.part += rhs.part;
        self.subpart += rhs.subpart;
    }
}

pub fn level_distribution(forest: &HierarchyForest) -> LevelCounts {
    let mut counts = LevelCounts::default();
    for &l in &forest.level {
        counts.add(l);
    }
    counts
}
