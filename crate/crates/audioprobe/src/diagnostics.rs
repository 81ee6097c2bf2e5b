//! Pure diagnostics over a correctness grid: condition accuracies, the
//! text-prior rate, fragment retention rates, the five-way item
//! decomposition, and per-category breakdowns.
//!
//! Everything here is a pure function of the grid; nothing touches the
//! network or the filesystem.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conditions::Condition;
use crate::dataset::BenchmarkItem;

/// Per-item, per-condition boolean correctness. The sole input to every
/// diagnostic quantity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrectnessGrid {
    model_id: String,
    item_ids: Vec<String>,
    cells: BTreeMap<(String, Condition), bool>,
    fragment_ns: BTreeSet<u32>,
    has_text_backbone: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DiagnosticsError {
    #[error("grid is missing cells: {}", .0.join(", "))]
    MissingCells(Vec<String>),
    #[error("cell ({item_id}, {condition}) lies outside the declared condition set")]
    StrayCell { item_id: String, condition: Condition },
    #[error("unknown item '{0}'")]
    UnknownItem(String),
    #[error("full-audio accuracy is zero; retention is undefined")]
    ZeroFullAccuracy,
    #[error("fragment count {0} was not evaluated")]
    UnevaluatedN(u32),
    #[error("grid has no items")]
    EmptyGrid,
}

impl CorrectnessGrid {
    /// Build and validate a grid. Every item must carry `full` and
    /// `no_audio` cells plus a complete fragment row for each declared n;
    /// `text_backbone` cells are all-or-nothing across items.
    pub fn from_cells(
        model_id: impl Into<String>,
        item_ids: Vec<String>,
        cells: BTreeMap<(String, Condition), bool>,
        fragment_ns: BTreeSet<u32>,
    ) -> Result<Self, DiagnosticsError> {
        if item_ids.is_empty() {
            return Err(DiagnosticsError::EmptyGrid);
        }
        let id_set: BTreeSet<&String> = item_ids.iter().collect();

        let mut missing = Vec::new();
        let mut tb_present = 0usize;
        for id in &item_ids {
            for required in [Condition::Full, Condition::NoAudio] {
                if !cells.contains_key(&(id.clone(), required)) {
                    missing.push(format!("({id}, {required})"));
                }
            }
            if cells.contains_key(&(id.clone(), Condition::TextBackbone)) {
                tb_present += 1;
            }
            for &n in &fragment_ns {
                for k in 0..n {
                    let cond = Condition::Fragment { n, k };
                    if !cells.contains_key(&(id.clone(), cond)) {
                        missing.push(format!("({id}, {cond})"));
                    }
                }
            }
        }
        if !missing.is_empty() {
            return Err(DiagnosticsError::MissingCells(missing));
        }
        if tb_present != 0 && tb_present != item_ids.len() {
            return Err(DiagnosticsError::MissingCells(vec![format!(
                "text_backbone cells cover {tb_present} of {} items",
                item_ids.len()
            )]));
        }

        for (item_id, condition) in cells.keys() {
            if !id_set.contains(item_id) {
                return Err(DiagnosticsError::StrayCell {
                    item_id: item_id.clone(),
                    condition: *condition,
                });
            }
            let declared = match condition {
                Condition::Full | Condition::NoAudio => true,
                Condition::TextBackbone => tb_present > 0,
                Condition::Fragment { n, k } => fragment_ns.contains(n) && k < n,
            };
            if !declared {
                return Err(DiagnosticsError::StrayCell {
                    item_id: item_id.clone(),
                    condition: *condition,
                });
            }
        }

        Ok(Self {
            model_id: model_id.into(),
            item_ids,
            cells,
            fragment_ns,
            has_text_backbone: tb_present > 0,
        })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    pub fn fragment_ns(&self) -> &BTreeSet<u32> {
        &self.fragment_ns
    }

    pub fn has_text_backbone(&self) -> bool {
        self.has_text_backbone
    }

    pub fn cell(&self, item_id: &str, condition: Condition) -> Option<bool> {
        self.cells.get(&(item_id.to_string(), condition)).copied()
    }

    pub fn cells(&self) -> impl Iterator<Item = (&(String, Condition), &bool)> {
        self.cells.iter()
    }

    fn require(&self, item_id: &str, condition: Condition) -> Result<bool, DiagnosticsError> {
        self.cell(item_id, condition)
            .ok_or_else(|| DiagnosticsError::MissingCells(vec![format!("({item_id}, {condition})")]))
    }
}

/// Mean correctness under one condition, over all grid items.
pub fn accuracy(grid: &CorrectnessGrid, condition: Condition) -> Result<f64, DiagnosticsError> {
    let mut correct = 0usize;
    for id in grid.item_ids() {
        if grid.require(id, condition)? {
            correct += 1;
        }
    }
    Ok(correct as f64 / grid.len() as f64)
}

/// Acc_none / Acc_full: the fraction of full-audio accuracy reachable with
/// no audio at all. `None` when Acc_full is zero (undefined, not zero).
pub fn text_prior_rate(grid: &CorrectnessGrid) -> Result<Option<f64>, DiagnosticsError> {
    let acc_full = accuracy(grid, Condition::Full)?;
    let acc_none = accuracy(grid, Condition::NoAudio)?;
    if acc_full == 0.0 {
        return Ok(None);
    }
    Ok(Some(acc_none / acc_full))
}

/// Mean over items of the per-item mean fragment correctness at `n`.
pub fn mean_fragment_accuracy(grid: &CorrectnessGrid, n: u32) -> Result<f64, DiagnosticsError> {
    if !grid.fragment_ns().contains(&n) {
        return Err(DiagnosticsError::UnevaluatedN(n));
    }
    let mut sum = 0.0;
    for id in grid.item_ids() {
        let mut correct = 0usize;
        for k in 0..n {
            if grid.require(id, Condition::Fragment { n, k })? {
                correct += 1;
            }
        }
        sum += correct as f64 / n as f64;
    }
    Ok(sum / grid.len() as f64)
}

/// Retention rate at `n`: mean per-item fragment accuracy normalized by
/// full-audio accuracy. May exceed 1 when fragments outscore full audio;
/// never clamped.
pub fn retention_rate(grid: &CorrectnessGrid, n: u32) -> Result<f64, DiagnosticsError> {
    if !grid.fragment_ns().contains(&n) {
        return Err(DiagnosticsError::UnevaluatedN(n));
    }
    let mut full_correct = 0usize;
    for id in grid.item_ids() {
        if grid.require(id, Condition::Full)? {
            full_correct += 1;
        }
    }
    if full_correct == 0 {
        return Err(DiagnosticsError::ZeroFullAccuracy);
    }
    let mut fragment_sum = 0.0;
    for id in grid.item_ids() {
        let mut correct = 0usize;
        for k in 0..n {
            if grid.require(id, Condition::Fragment { n, k })? {
                correct += 1;
            }
        }
        fragment_sum += correct as f64 / n as f64;
    }
    // |Q| * Acc_full is exactly the number of full-correct items.
    Ok(fragment_sum / full_correct as f64)
}

/// The five mutually exclusive item categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    /// Correct with and without audio.
    TS,
    /// Audio needed, and some fragment already suffices.
    FS,
    /// Audio needed, and no single fragment suffices.
    XS,
    /// Correct without audio but wrong with it.
    AH,
    /// Wrong either way.
    UN,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Category::TS => "TS",
            Category::FS => "FS",
            Category::XS => "XS",
            Category::AH => "AH",
            Category::UN => "UN",
        };
        f.write_str(name)
    }
}

/// Classify one item from its Full, NoAudio, and fragment cells.
///
/// Fragment sufficiency considers every evaluated n: any correct fragment
/// cell at any n makes an audio-needed item FS. Use [`decompose_item_at`]
/// for the stricter single-n view.
pub fn decompose_item(grid: &CorrectnessGrid, item_id: &str) -> Result<Category, DiagnosticsError> {
    let ns: Vec<u32> = grid.fragment_ns().iter().copied().collect();
    decompose_with_ns(grid, item_id, &ns)
}

/// Classification considering only fragments of one n.
pub fn decompose_item_at(
    grid: &CorrectnessGrid,
    item_id: &str,
    n: u32,
) -> Result<Category, DiagnosticsError> {
    if !grid.fragment_ns().contains(&n) {
        return Err(DiagnosticsError::UnevaluatedN(n));
    }
    decompose_with_ns(grid, item_id, &[n])
}

fn decompose_with_ns(
    grid: &CorrectnessGrid,
    item_id: &str,
    ns: &[u32],
) -> Result<Category, DiagnosticsError> {
    if !grid.item_ids().iter().any(|id| id == item_id) {
        return Err(DiagnosticsError::UnknownItem(item_id.to_string()));
    }
    let full = grid.require(item_id, Condition::Full)?;
    let none = grid.require(item_id, Condition::NoAudio)?;
    Ok(match (full, none) {
        (true, true) => Category::TS,
        (false, true) => Category::AH,
        (false, false) => Category::UN,
        (true, false) => {
            let mut any_fragment = false;
            'outer: for &n in ns {
                for k in 0..n {
                    if grid.require(item_id, Condition::Fragment { n, k })? {
                        any_fragment = true;
                        break 'outer;
                    }
                }
            }
            if any_fragment {
                Category::FS
            } else {
                Category::XS
            }
        }
    })
}

/// Counts per category. The five counts always sum to the item count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub ts: usize,
    pub fs: usize,
    pub xs: usize,
    pub ah: usize,
    pub un: usize,
}

impl CategoryCounts {
    pub fn total(&self) -> usize {
        self.ts + self.fs + self.xs + self.ah + self.un
    }

    /// |AN| = |FS| + |XS|: items that need audio at all.
    pub fn audio_needed(&self) -> usize {
        self.fs + self.xs
    }

    /// Share of audio-needed items that require cross-segment information.
    pub fn xs_share_of_audio_needed(&self) -> Option<f64> {
        let an = self.audio_needed();
        (an > 0).then(|| self.xs as f64 / an as f64)
    }

    pub fn add(&mut self, category: Category) {
        match category {
            Category::TS => self.ts += 1,
            Category::FS => self.fs += 1,
            Category::XS => self.xs += 1,
            Category::AH => self.ah += 1,
            Category::UN => self.un += 1,
        }
    }

    pub fn get(&self, category: Category) -> usize {
        match category {
            Category::TS => self.ts,
            Category::FS => self.fs,
            Category::XS => self.xs,
            Category::AH => self.ah,
            Category::UN => self.un,
        }
    }
}

/// Classify every grid item. Counts sum to the grid size.
pub fn decomposition_counts(grid: &CorrectnessGrid) -> Result<CategoryCounts, DiagnosticsError> {
    let mut counts = CategoryCounts::default();
    for id in grid.item_ids() {
        counts.add(decompose_item(grid, id)?);
    }
    Ok(counts)
}

/// Per-n decomposition variant: fragment sufficiency restricted to one n.
pub fn decomposition_counts_at(
    grid: &CorrectnessGrid,
    n: u32,
) -> Result<CategoryCounts, DiagnosticsError> {
    let mut counts = CategoryCounts::default();
    for id in grid.item_ids() {
        counts.add(decompose_item_at(grid, id, n)?);
    }
    Ok(counts)
}

/// One row of the per-category (domain) table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainRow {
    pub category: String,
    pub items: usize,
    pub acc_full: f64,
    pub acc_none: f64,
    /// Full − None accuracy gap, the audio-dependency proxy.
    pub gap: f64,
    /// Retention at the smallest evaluated n, within this category.
    /// `None` when no fragments were evaluated or category Acc_full is 0.
    pub retention_min_n: Option<f64>,
}

/// Per item-category accuracies, Full−None gaps, and retention at the
/// smallest evaluated n. Items without grid cells are skipped; empty
/// categories are omitted. Rows sorted by category name.
pub fn domain_breakdown(grid: &CorrectnessGrid, items: &[BenchmarkItem]) -> Vec<DomainRow> {
    let min_n = grid.fragment_ns().iter().next().copied();
    let mut by_category: BTreeMap<&str, Vec<&BenchmarkItem>> = BTreeMap::new();
    for item in items {
        if grid.cell(&item.id, Condition::Full).is_some() {
            by_category.entry(item.category.as_str()).or_default().push(item);
        }
    }

    let mut rows = Vec::new();
    for (category, members) in by_category {
        let count = members.len();
        let full_correct = members
            .iter()
            .filter(|item| grid.cell(&item.id, Condition::Full) == Some(true))
            .count();
        let none_correct = members
            .iter()
            .filter(|item| grid.cell(&item.id, Condition::NoAudio) == Some(true))
            .count();
        let acc_full = full_correct as f64 / count as f64;
        let acc_none = none_correct as f64 / count as f64;

        let retention_min_n = min_n.and_then(|n| {
            if full_correct == 0 {
                return None;
            }
            let mut fragment_sum = 0.0;
            for item in &members {
                let mut correct = 0usize;
                for k in 0..n {
                    if grid.cell(&item.id, Condition::Fragment { n, k }) == Some(true) {
                        correct += 1;
                    }
                }
                fragment_sum += correct as f64 / n as f64;
            }
            Some(fragment_sum / full_correct as f64)
        });

        rows.push(DomainRow {
            category: category.to_string(),
            items: count,
            acc_full,
            acc_none,
            gap: acc_full - acc_none,
            retention_min_n,
        });
    }
    rows
}

/// How far text-backbone accuracy sits above (or below) chance.
pub fn tb_delta(acc_tb: f64, chance: f64) -> f64 {
    acc_tb - chance
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Per-item fragment rows: (n, cells of length n).
    type FragmentRows<'a> = &'a [(u32, &'a [bool])];
    /// One test row: (item id, full, no_audio, fragment rows).
    type GridRow<'a> = (&'a str, bool, bool, FragmentRows<'a>);

    /// Grid builder for tests: per item (full, none, fragment rows per n).
    pub(crate) fn grid_from_rows(rows: &[GridRow<'_>]) -> CorrectnessGrid {
        let mut cells = BTreeMap::new();
        let mut ids = Vec::new();
        let mut ns = BTreeSet::new();
        for (id, full, none, fragments) in rows {
            ids.push(id.to_string());
            cells.insert((id.to_string(), Condition::Full), *full);
            cells.insert((id.to_string(), Condition::NoAudio), *none);
            for (n, row) in *fragments {
                ns.insert(*n);
                assert_eq!(row.len(), *n as usize);
                for (k, &value) in row.iter().enumerate() {
                    cells.insert(
                        (id.to_string(), Condition::Fragment { n: *n, k: k as u32 }),
                        value,
                    );
                }
            }
        }
        CorrectnessGrid::from_cells("test-model", ids, cells, ns).unwrap()
    }

    #[test]
    fn accuracy_is_the_cell_mean() {
        let grid = grid_from_rows(&[
            ("a", true, false, &[]),
            ("b", true, false, &[]),
            ("c", false, false, &[]),
            ("d", true, false, &[]),
        ]);
        assert_eq!(accuracy(&grid, Condition::Full).unwrap(), 0.75);
        assert_eq!(accuracy(&grid, Condition::NoAudio).unwrap(), 0.0);
    }

    #[test]
    fn missing_cells_are_detected_at_construction() {
        let mut cells = BTreeMap::new();
        cells.insert(("q1".to_string(), Condition::Full), true);
        let err = CorrectnessGrid::from_cells(
            "m",
            vec!["q1".into()],
            cells,
            BTreeSet::new(),
        )
        .unwrap_err();
        assert!(matches!(err, DiagnosticsError::MissingCells(_)));
    }

    #[test]
    fn stray_cells_are_rejected() {
        let mut cells = BTreeMap::new();
        cells.insert(("q1".to_string(), Condition::Full), true);
        cells.insert(("q1".to_string(), Condition::NoAudio), true);
        cells.insert(("q1".to_string(), Condition::Fragment { n: 7, k: 0 }), true);
        let err =
            CorrectnessGrid::from_cells("m", vec!["q1".into()], cells, BTreeSet::new()).unwrap_err();
        assert!(matches!(err, DiagnosticsError::StrayCell { .. }));
    }

    #[test]
    fn text_prior_rate_identity_and_ratio() {
        let half = grid_from_rows(&[("a", true, true, &[]), ("b", false, false, &[])]);
        assert_eq!(text_prior_rate(&half).unwrap(), Some(1.0));

        // Acc_none = 0.45 / Acc_full = 0.75 → 0.60: 20 items, 15 full, 9 none.
        let rows: Vec<(String, bool, bool)> = (0..20)
            .map(|i| (format!("q{i}"), i < 15, i < 9))
            .collect();
        let borrowed: Vec<GridRow<'_>> = rows
            .iter()
            .map(|(id, full, none)| (id.as_str(), *full, *none, &[] as FragmentRows<'_>))
            .collect();
        let grid = grid_from_rows(&borrowed);
        let rate = text_prior_rate(&grid).unwrap().unwrap();
        assert!((rate - 0.60).abs() < 1e-12);
    }

    #[test]
    fn text_prior_rate_undefined_when_full_is_zero() {
        let grid = grid_from_rows(&[("a", false, true, &[])]);
        assert_eq!(text_prior_rate(&grid).unwrap(), None);
    }

    #[test]
    fn retention_upper_and_lower_identities() {
        let all = grid_from_rows(&[
            ("a", true, false, &[(2, &[true, true])]),
            ("b", true, false, &[(2, &[true, true])]),
        ]);
        assert_eq!(retention_rate(&all, 2).unwrap(), 1.0);

        let none = grid_from_rows(&[
            ("a", true, false, &[(2, &[false, false])]),
            ("b", true, false, &[(2, &[false, false])]),
        ]);
        assert_eq!(retention_rate(&none, 2).unwrap(), 0.0);
    }

    #[test]
    fn retention_worked_fixture_is_exactly_three_quarters() {
        // Full {1,1,0}; fragment rows a:[1,0], b:[1,1], c:[0,0]:
        // (0.5 + 1 + 0) / (3 * (2/3)) = 0.75.
        let grid = grid_from_rows(&[
            ("a", true, false, &[(2, &[true, false])]),
            ("b", true, false, &[(2, &[true, true])]),
            ("c", false, false, &[(2, &[false, false])]),
        ]);
        assert_eq!(retention_rate(&grid, 2).unwrap(), 0.75);
    }

    #[test]
    fn retention_errors() {
        let grid = grid_from_rows(&[("a", false, false, &[(2, &[true, false])])]);
        assert_eq!(
            retention_rate(&grid, 2).unwrap_err(),
            DiagnosticsError::ZeroFullAccuracy
        );
        let grid = grid_from_rows(&[("a", true, false, &[(2, &[true, false])])]);
        assert_eq!(
            retention_rate(&grid, 3).unwrap_err(),
            DiagnosticsError::UnevaluatedN(3)
        );
    }

    #[test]
    fn retention_may_exceed_one() {
        // Fragments outscore full audio; the value must not be clamped.
        let grid = grid_from_rows(&[
            ("a", true, false, &[(2, &[true, true])]),
            ("b", false, false, &[(2, &[true, true])]),
        ]);
        assert_eq!(retention_rate(&grid, 2).unwrap(), 2.0);
    }

    #[test]
    fn category_assignments_follow_the_table() {
        let grid = grid_from_rows(&[
            ("ts", true, true, &[(2, &[false, false])]),
            ("fs", true, false, &[(2, &[true, false])]),
            ("xs", true, false, &[(2, &[false, false])]),
            ("ah", false, true, &[(2, &[false, false])]),
            ("un", false, false, &[(2, &[true, true])]),
        ]);
        assert_eq!(decompose_item(&grid, "ts").unwrap(), Category::TS);
        assert_eq!(decompose_item(&grid, "fs").unwrap(), Category::FS);
        assert_eq!(decompose_item(&grid, "xs").unwrap(), Category::XS);
        assert_eq!(decompose_item(&grid, "ah").unwrap(), Category::AH);
        assert_eq!(decompose_item(&grid, "un").unwrap(), Category::UN);
    }

    #[test]
    fn fragment_sufficiency_spans_all_evaluated_ns() {
        // Correct only in the n=3 row: still FS overall, XS at n=2.
        let grid = grid_from_rows(&[(
            "q",
            true,
            false,
            &[(2, &[false, false]), (3, &[false, true, false])],
        )]);
        assert_eq!(decompose_item(&grid, "q").unwrap(), Category::FS);
        assert_eq!(decompose_item_at(&grid, "q", 2).unwrap(), Category::XS);
        assert_eq!(decompose_item_at(&grid, "q", 3).unwrap(), Category::FS);
    }

    #[test]
    fn planted_counts_are_reproduced() {
        let grid = grid_from_rows(&[
            ("t1", true, true, &[(2, &[false, false])]),
            ("t2", true, true, &[(2, &[true, true])]),
            ("f1", true, false, &[(2, &[false, true])]),
            ("x1", true, false, &[(2, &[false, false])]),
            ("a1", false, true, &[(2, &[false, false])]),
            ("u1", false, false, &[(2, &[false, false])]),
        ]);
        let counts = decomposition_counts(&grid).unwrap();
        assert_eq!(
            counts,
            CategoryCounts { ts: 2, fs: 1, xs: 1, ah: 1, un: 1 }
        );
        assert_eq!(counts.total(), 6);
        assert_eq!(counts.audio_needed(), 2);
        assert_eq!(counts.xs_share_of_audio_needed(), Some(0.5));
    }

    #[test]
    fn all_ts_grid() {
        let grid = grid_from_rows(&[
            ("a", true, true, &[(2, &[true, true])]),
            ("b", true, true, &[(2, &[false, true])]),
        ]);
        let counts = decomposition_counts(&grid).unwrap();
        assert_eq!(counts.ts, 2);
        assert_eq!(counts.total(), 2);
        assert_eq!(counts.xs_share_of_audio_needed(), None);
    }

    #[test]
    fn domain_breakdown_reports_planted_gaps() {
        use crate::dataset::{GoldAnswer, TaskType};
        let make_item = |id: &str, category: &str| BenchmarkItem {
            id: id.into(),
            benchmark: "demo".into(),
            task_type: TaskType::Mcq,
            question: "?".into(),
            choices: vec!["a".into(), "b".into()],
            gold: GoldAnswer::Choice(0),
            audio_ref: None,
            category: category.into(),
            sub_category: None,
            extra: Default::default(),
        };
        // speech: 10 items, full 8/10, none 5/10 → gap 0.3.
        // sound: 4 items, full 2/4, none 2/4 → gap 0.0.
        let mut cells = BTreeMap::new();
        let mut ids = Vec::new();
        let mut plant = |id: String, full: bool, none: bool, frag0: bool| {
            cells.insert((id.clone(), Condition::Full), full);
            cells.insert((id.clone(), Condition::NoAudio), none);
            cells.insert((id.clone(), Condition::Fragment { n: 2, k: 0 }), frag0);
            cells.insert((id.clone(), Condition::Fragment { n: 2, k: 1 }), false);
            ids.push(id);
        };
        for i in 0..10 {
            plant(format!("sp{i}"), i < 8, i < 5, i < 4);
        }
        for i in 0..4 {
            plant(format!("sn{i}"), i < 2, i < 2, i < 1);
        }
        let grid = CorrectnessGrid::from_cells(
            "test-model",
            ids,
            cells,
            [2].into_iter().collect(),
        )
        .unwrap();

        let mut items: Vec<BenchmarkItem> =
            (0..10).map(|i| make_item(&format!("sp{i}"), "speech")).collect();
        items.extend((0..4).map(|i| make_item(&format!("sn{i}"), "sound")));

        let table = domain_breakdown(&grid, &items);
        assert_eq!(table.len(), 2);
        let sound = &table[0];
        assert_eq!(sound.category, "sound");
        assert_eq!(sound.items, 4);
        assert!((sound.gap - 0.0).abs() < 1e-12);
        let speech = &table[1];
        assert_eq!(speech.category, "speech");
        assert!((speech.gap - 0.3).abs() < 1e-12);
        // speech retention at n=2: (4 * 0.5) / 8 = 0.25.
        assert!((speech.retention_min_n.unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn single_category_grid_gap_matches_overall() {
        use crate::dataset::{GoldAnswer, TaskType};
        let items: Vec<BenchmarkItem> = (0..4)
            .map(|i| BenchmarkItem {
                id: format!("q{i}"),
                benchmark: "demo".into(),
                task_type: TaskType::Mcq,
                question: "?".into(),
                choices: vec!["a".into(), "b".into()],
                gold: GoldAnswer::Choice(0),
                audio_ref: None,
                category: "music".into(),
                sub_category: None,
                extra: Default::default(),
            })
            .collect();
        let grid = grid_from_rows(&[
            ("q0", true, true, &[]),
            ("q1", true, false, &[]),
            ("q2", true, false, &[]),
            ("q3", false, false, &[]),
        ]);
        let table = domain_breakdown(&grid, &items);
        assert_eq!(table.len(), 1);
        let overall_gap = accuracy(&grid, Condition::Full).unwrap()
            - accuracy(&grid, Condition::NoAudio).unwrap();
        assert!((table[0].gap - overall_gap).abs() < 1e-12);
        assert_eq!(table[0].retention_min_n, None);
    }

    #[test]
    fn tb_delta_examples() {
        assert!((tb_delta(0.374, 0.25) - 0.124).abs() < 1e-12);
        assert_eq!(tb_delta(0.25, 0.25), 0.0);
        assert!((tb_delta(0.20, 0.25) - (-0.05)).abs() < 1e-12);
    }

    fn arbitrary_grid() -> impl Strategy<Value = CorrectnessGrid> {
        (1usize..20, proptest::collection::vec(any::<bool>(), 400..500)).prop_map(
            |(item_count, bits)| {
                let ns: BTreeSet<u32> = [2u32, 3].into_iter().collect();
                let mut cells = BTreeMap::new();
                let mut ids = Vec::new();
                let mut bit = bits.into_iter().cycle();
                let mut next = move || bit.next().unwrap();
                for i in 0..item_count {
                    let id = format!("q{i}");
                    ids.push(id.clone());
                    cells.insert((id.clone(), Condition::Full), next());
                    cells.insert((id.clone(), Condition::NoAudio), next());
                    for &n in &ns {
                        for k in 0..n {
                            cells.insert((id.clone(), Condition::Fragment { n, k }), next());
                        }
                    }
                }
                CorrectnessGrid::from_cells("prop-model", ids, cells, ns).unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn partition_identity_holds(grid in arbitrary_grid()) {
            let counts = decomposition_counts(&grid).unwrap();
            prop_assert_eq!(counts.total(), grid.len());
        }

        #[test]
        fn retention_is_never_negative(grid in arbitrary_grid()) {
            for &n in &[2u32, 3] {
                match retention_rate(&grid, n) {
                    Ok(r) => prop_assert!(r >= 0.0),
                    Err(DiagnosticsError::ZeroFullAccuracy) => {}
                    Err(other) => return Err(TestCaseError::fail(format!("{other}"))),
                }
            }
        }

        #[test]
        fn adding_a_true_fragment_never_turns_fs_into_xs(grid in arbitrary_grid()) {
            // Flip one false fragment cell to true and compare per-item categories.
            let target = grid
                .cells()
                .find(|((_, cond), value)| cond.is_fragment() && !**value)
                .map(|(key, _)| key.clone());
            if let Some((item_id, condition)) = target {
                let mut cells: BTreeMap<(String, Condition), bool> =
                    grid.cells().map(|(k, v)| (k.clone(), *v)).collect();
                cells.insert((item_id.clone(), condition), true);
                let flipped = CorrectnessGrid::from_cells(
                    grid.model_id().to_string(),
                    grid.item_ids().to_vec(),
                    cells,
                    grid.fragment_ns().clone(),
                ).unwrap();
                let before = decompose_item(&grid, &item_id).unwrap();
                let after = decompose_item(&flipped, &item_id).unwrap();
                prop_assert!(!(before == Category::FS && after == Category::XS));
                // XS may be promoted to FS, never the reverse.
                if before == Category::XS {
                    prop_assert!(after == Category::FS || after == Category::XS);
                }
            }
        }

        #[test]
        fn flipping_no_audio_off_never_yields_ah(grid in arbitrary_grid()) {
            let item_id = grid.item_ids()[0].clone();
            let mut cells: BTreeMap<(String, Condition), bool> =
                grid.cells().map(|(k, v)| (k.clone(), *v)).collect();
            cells.insert((item_id.clone(), Condition::NoAudio), false);
            let flipped = CorrectnessGrid::from_cells(
                grid.model_id().to_string(),
                grid.item_ids().to_vec(),
                cells,
                grid.fragment_ns().clone(),
            ).unwrap();
            prop_assert_ne!(decompose_item(&flipped, &item_id).unwrap(), Category::AH);
        }
    }
}
