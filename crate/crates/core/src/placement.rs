//! Local-memory placement of component weights.
//!
//! Keeping a byte in local memory saves `hz * (offchip_pj - local_pj)` per
//! second, so the value of a byte is proportional to how often its component
//! is invoked. Fractional placement is a continuous knapsack and is solved by
//! filling the scratchpad in descending frequency; whole-component placement
//! is a 0/1 knapsack solved exactly by branch and bound.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::energy::{self, EnergyError};
use crate::model::{ComponentName, MemoryConfig, ModelState};
use crate::scalar::Scalar;
use crate::workload::InvocationProfile;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementMode {
    /// Any byte split across tiers.
    #[default]
    Fractional,
    /// Each component entirely local or entirely off-chip.
    WholeComponent,
}

impl std::str::FromStr for PlacementMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fractional" => Ok(PlacementMode::Fractional),
            "whole" | "whole_component" => Ok(PlacementMode::WholeComponent),
            other => Err(format!("unknown placement mode `{other}` (expected fractional or whole)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TierSplit<T> {
    pub name: ComponentName,
    pub local_bytes: T,
    pub offchip_bytes: T,
}

impl<T: Scalar> TierSplit<T> {
    pub fn total(&self) -> T {
        self.local_bytes + self.offchip_bytes
    }

    pub fn is_fully_local(&self) -> bool {
        self.offchip_bytes.is_zero()
    }
}

/// Per-component byte split, in the same order as the items it was built
/// from.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Placement<T> {
    pub components: Vec<TierSplit<T>>,
    pub mode: PlacementMode,
}

/// What the allocator needs to know about a component.
#[derive(Clone, Debug, PartialEq)]
pub struct PlacementItem<T> {
    pub name: ComponentName,
    pub bytes: T,
    pub hz: T,
}

impl<T: Scalar> Placement<T> {
    pub fn all_offchip(items: &[PlacementItem<T>], mode: PlacementMode) -> Self {
        Placement {
            components: items
                .iter()
                .map(|it| TierSplit {
                    name: it.name.clone(),
                    local_bytes: T::zero(),
                    offchip_bytes: it.bytes,
                })
                .collect(),
            mode,
        }
    }

    pub fn get(&self, name: &ComponentName) -> Option<&TierSplit<T>> {
        self.components.iter().find(|s| &s.name == name)
    }

    pub fn local_total(&self) -> T {
        self.components.iter().fold(T::zero(), |acc, s| acc + s.local_bytes)
    }

    /// Capacity, non-negativity and byte conservation against `items`.
    pub fn satisfies(&self, items: &[PlacementItem<T>], capacity: T) -> bool {
        let local = self.local_total();
        let fits = local <= capacity || local.close_to(capacity);
        fits && self.components.len() == items.len()
            && self.components.iter().zip(items).all(|(s, it)| {
                s.name == it.name
                    && s.local_bytes >= T::zero()
                    && s.offchip_bytes >= T::zero()
                    && s.total().close_to(it.bytes)
            })
    }
}

/// Builds placement items from a model state and its invocation profile.
pub fn placement_items<T: Scalar>(state: &ModelState, profile: &InvocationProfile<T>) -> Vec<PlacementItem<T>> {
    state
        .components
        .iter()
        .map(|c| PlacementItem {
            name: c.name().clone(),
            bytes: c.stored_bytes(),
            hz: c.spec.role().map_or(T::zero(), |r| profile.hz_for(r)),
        })
        .collect()
}

/// Descending frequency, then smaller component, then name.
fn priority_order<T: Scalar>(items: &[PlacementItem<T>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&items[i], &items[j]);
        b.hz.partial_cmp(&a.hz)
            .unwrap_or(Ordering::Equal)
            .then(a.bytes.partial_cmp(&b.bytes).unwrap_or(Ordering::Equal))
            .then_with(|| a.name.cmp(&b.name))
    });
    order
}

/// Power-optimal placement of `items` into `capacity` local bytes.
pub fn allocate_local<T: Scalar>(items: &[PlacementItem<T>], capacity: T, mode: PlacementMode) -> Placement<T> {
    let mut placement = Placement::all_offchip(items, mode);
    let capacity = capacity.max_of(T::zero());
    match mode {
        PlacementMode::Fractional => {
            let mut left = capacity;
            for i in priority_order(items) {
                let it = &items[i];
                if left <= T::zero() {
                    break;
                }
                if it.hz <= T::zero() || it.bytes <= T::zero() {
                    continue;
                }
                let take = it.bytes.min_of(left);
                placement.components[i].local_bytes = take;
                placement.components[i].offchip_bytes = it.bytes - take;
                left = left - take;
            }
        }
        PlacementMode::WholeComponent => {
            for i in whole_component_selection(items, capacity) {
                placement.components[i].local_bytes = items[i].bytes;
                placement.components[i].offchip_bytes = T::zero();
            }
        }
    }
    placement
}

struct Knapsack<'a, T> {
    items: &'a [PlacementItem<T>],
    order: Vec<usize>,
    capacity: T,
    best_value: T,
    best: Vec<usize>,
    current: Vec<usize>,
}

impl<T: Scalar> Knapsack<'_, T> {
    /// Continuous relaxation over `order[depth..]`; items are sorted by
    /// value density (= hz), so greedy fill is the exact relaxation.
    fn bound(&self, depth: usize, room: T) -> T {
        let mut room = room;
        let mut value = T::zero();
        for &i in &self.order[depth..] {
            let it = &self.items[i];
            if room <= T::zero() {
                break;
            }
            let take = it.bytes.min_of(room);
            value = value + take * it.hz;
            room = room - take;
        }
        value
    }

    fn search(&mut self, depth: usize, room: T, value: T) {
        if value > self.best_value {
            self.best_value = value;
            self.best = self.current.clone();
        }
        if depth == self.order.len() || value + self.bound(depth, room) <= self.best_value {
            return;
        }
        let i = self.order[depth];
        let it = &self.items[i];
        if it.bytes <= room {
            self.current.push(i);
            self.search(depth + 1, room - it.bytes, value + it.bytes * it.hz);
            self.current.pop();
        }
        self.search(depth + 1, room, value);
    }
}

/// Indices of the components to keep local under the all-or-nothing rule.
fn whole_component_selection<T: Scalar>(items: &[PlacementItem<T>], capacity: T) -> Vec<usize> {
    let order: Vec<usize> = priority_order(items)
        .into_iter()
        .filter(|&i| items[i].hz > T::zero() && items[i].bytes > T::zero() && items[i].bytes <= capacity)
        .collect();
    let mut ks = Knapsack {
        items,
        order,
        capacity,
        best_value: T::zero(),
        best: Vec::new(),
        current: Vec::new(),
    };
    let cap = ks.capacity;
    ks.search(0, cap, T::zero());
    let mut best = ks.best;
    best.sort_unstable();
    best
}

/// Places a model state under the memory configuration's weight capacity.
pub fn allocate_for_state<T: Scalar>(
    state: &ModelState,
    profile: &InvocationProfile<T>,
    memory: &MemoryConfig,
    mode: PlacementMode,
) -> Placement<T> {
    let items = placement_items(state, profile);
    allocate_local(&items, T::lit(memory.local_weight_capacity_bytes), mode)
}

/// Memory power of `before` minus that of `after`, in mW.
pub fn placement_power_delta<T: Scalar>(
    state: &ModelState,
    profile: &InvocationProfile<T>,
    before: &Placement<T>,
    after: &Placement<T>,
    memory: &MemoryConfig,
) -> Result<T, EnergyError> {
    let p_before = energy::memory_power_of_placement(state, profile, before, memory)?;
    let p_after = energy::memory_power_of_placement(state, profile, after, memory)?;
    Ok(p_before - p_after)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ComponentSpec;
    use crate::Rational;

    fn item(name: &str, bytes: f64, hz: f64) -> PlacementItem<f64> {
        PlacementItem {
            name: name.into(),
            bytes,
            hz,
        }
    }

    fn baseline_items(joiner_bytes: f64) -> Vec<PlacementItem<f64>> {
        vec![
            item("Encoder", 60.7e6, 6.25),
            item("Predictor", 8.5e6, 11.53),
            item("Joiner", joiner_bytes, 113.5),
        ]
    }

    const MB15: f64 = 1.5e6;

    #[test]
    fn compressed_joiner_goes_local_and_predictor_fills_the_rest() {
        let items = baseline_items(1.2e6);
        let p = allocate_local(&items, MB15, PlacementMode::Fractional);
        assert!(p.components[2].is_fully_local());
        assert_eq!(p.components[0].local_bytes, 0.0);
        assert!((p.components[1].local_bytes - 0.3e6).abs() < 1e-6);
        assert!(p.satisfies(&items, MB15));

        let w = allocate_local(&items, MB15, PlacementMode::WholeComponent);
        assert!(w.components[2].is_fully_local());
        assert_eq!(w.components[1].local_bytes, 0.0);
    }

    #[test]
    fn zero_capacity_is_all_offchip() {
        let items = baseline_items(4.0e6);
        for mode in [PlacementMode::Fractional, PlacementMode::WholeComponent] {
            let p = allocate_local(&items, 0.0, mode);
            assert_eq!(p, Placement::all_offchip(&items, mode));
        }
    }

    #[test]
    fn whole_mode_skips_components_that_do_not_fit() {
        let items = baseline_items(4.0e6);
        let p = allocate_local(&items, MB15, PlacementMode::WholeComponent);
        assert_eq!(p.local_total(), 0.0);
    }

    #[test]
    fn whole_mode_prefers_value_over_frequency_order() {
        // Greedy by frequency takes A (value 80) and nothing else fits;
        // B + C are worth 90.
        let items = vec![item("A", 8.0, 10.0), item("B", 6.0, 9.0), item("C", 4.0, 9.0)];
        let p = allocate_local(&items, 10.0, PlacementMode::WholeComponent);
        assert_eq!(p.components[0].local_bytes, 0.0);
        assert!(p.components[1].is_fully_local() && p.components[2].is_fully_local());
    }

    #[test]
    fn frequency_ties_prefer_smaller_then_name() {
        let items = vec![item("B", 5.0, 1.0), item("A", 5.0, 1.0), item("C", 3.0, 1.0)];
        let p = allocate_local(&items, 4.0, PlacementMode::Fractional);
        assert_eq!(p.components[2].local_bytes, 3.0);
        assert_eq!(p.components[1].local_bytes, 1.0);
        assert_eq!(p.components[0].local_bytes, 0.0);
    }

    #[test]
    fn exact_fractional_fill() {
        let items = vec![
            PlacementItem {
                name: "X".into(),
                bytes: Rational::new(7, 3),
                hz: Rational::new(5, 2),
            },
            PlacementItem {
                name: "Y".into(),
                bytes: Rational::new(10, 1),
                hz: Rational::new(1, 7),
            },
        ];
        let p = allocate_local(&items, Rational::new(3, 1), PlacementMode::Fractional);
        assert_eq!(p.components[0].local_bytes, Rational::new(7, 3));
        assert_eq!(p.components[1].local_bytes, Rational::new(2, 3));
        assert_eq!(p.components[1].offchip_bytes, Rational::new(28, 3));
        assert!(p.satisfies(&items, Rational::new(3, 1)));
    }

    fn joiner_state(live: u64) -> (ModelState, InvocationProfile<f64>) {
        let state = ModelState {
            components: vec![crate::model::ComponentState::new(ComponentSpec::new("Joiner", 4_000_000), live).unwrap()],
        };
        let profile = InvocationProfile {
            encoder_hz: 6.25,
            predictor_hz: 11.53,
            joiner_hz: 113.5,
            frame_rate_hz: 25.0,
        };
        (state, profile)
    }

    #[test]
    fn moving_compressed_joiner_local_saves_about_16_mw() {
        let (state, profile) = joiner_state(1_200_000);
        let items = placement_items(&state, &profile);
        let before = Placement::all_offchip(&items, PlacementMode::Fractional);
        let after = allocate_local(&items, MB15, PlacementMode::Fractional);
        let mem = MemoryConfig::default();
        let saved = placement_power_delta(&state, &profile, &before, &after, &mem).unwrap();
        let oracle = 1.2e6 * 113.5 * (120.0 - 1.5) * 1e-9;
        assert!((saved - oracle).abs() < 1e-9);
        assert!((saved - 16.1).abs() < 0.05, "{saved}");
        let calibrated = mem.clone().with_calibration(1.049);
        let saved = placement_power_delta(&state, &profile, &before, &after, &calibrated).unwrap();
        assert!((saved - oracle * 1.049).abs() < 1e-9);
        assert_eq!(placement_power_delta(&state, &profile, &after, &after, &mem).unwrap(), 0.0);
    }

    #[test]
    fn mode_parses_from_cli_spelling() {
        assert_eq!("whole".parse::<PlacementMode>().unwrap(), PlacementMode::WholeComponent);
        assert_eq!("fractional".parse::<PlacementMode>().unwrap(), PlacementMode::Fractional);
        assert!("half".parse::<PlacementMode>().is_err());
    }
}
