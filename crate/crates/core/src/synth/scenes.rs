//! The three benchmark locations: layout, object catalogs, change schedules
//! and camera routes.

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Bbox3D, Intrinsics, Pose};

use super::{moved, Appearance, Backdrop, ObjectInstance, SceneScript, ScriptedChange, TimedPose, VisitPlan};

pub const VISITS_PER_LOCATION: u32 = 11;
pub const FRAME_WIDTH: u32 = 256;
pub const FRAME_HEIGHT: u32 = 192;
pub const FOCAL: f64 = 192.0;
const SECONDS_PER_DAY: f64 = 86_400.0;
const PAN_OFFSETS: [f64; 7] = [-30.0, -20.0, -10.0, 0.0, 10.0, 20.0, 30.0];
const WALK_FRAMES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationKind {
    Office,
    Grocery,
    Outdoor,
}

impl LocationKind {
    pub const ALL: [LocationKind; 3] = [LocationKind::Office, LocationKind::Grocery, LocationKind::Outdoor];

    pub fn id(self) -> &'static str {
        match self {
            LocationKind::Office => "office",
            LocationKind::Grocery => "grocery",
            LocationKind::Outdoor => "outdoor",
        }
    }
}

struct CatalogItem {
    label: &'static str,
    size: [f64; 3],
    details: &'static [&'static str],
}

const fn item(label: &'static str, size: [f64; 3], details: &'static [&'static str]) -> CatalogItem {
    CatalogItem { label, size, details }
}

const OFFICE: &[CatalogItem] = &[
    item("backpack", [0.36, 0.46, 0.26], &["blue", "red", "grey"]),
    item("cardboard box", [0.46, 0.36, 0.40], &["taped shut", "open"]),
    item("trash bin", [0.36, 0.52, 0.36], &["empty", "full"]),
    item("printer", [0.50, 0.34, 0.44], &["showing ready", "showing paper jam"]),
    item("potted plant", [0.34, 0.58, 0.34], &["green", "wilted"]),
    item("space heater", [0.32, 0.48, 0.22], &["off", "on"]),
    item("toolbox", [0.48, 0.28, 0.26], &["closed", "open"]),
    item("wet floor sign", [0.34, 0.56, 0.12], &["caution wet floor", "cleaning in progress"]),
    item("storage crate", [0.44, 0.32, 0.34], &["holding binders", "holding cables"]),
    item("recycling bin", [0.38, 0.54, 0.38], &["labelled paper", "labelled plastic"]),
];

const GROCERY: &[CatalogItem] = &[
    item("cereal box", [0.30, 0.40, 0.12], &["corn flakes", "oat rings"]),
    item("apple crate", [0.46, 0.26, 0.34], &["red apples", "green apples"]),
    item("price sign", [0.36, 0.30, 0.06], &["$2.99", "$3.49", "sale"]),
    item("bread basket", [0.42, 0.22, 0.30], &["baguettes", "rolls"]),
    item("milk crate", [0.40, 0.30, 0.30], &["whole milk", "skim milk"]),
    item("flower bucket", [0.30, 0.44, 0.30], &["roses", "tulips"]),
    item("cookie tin", [0.32, 0.20, 0.32], &["shortbread", "chocolate chip"]),
    item("banana box", [0.48, 0.24, 0.32], &["green bananas", "ripe bananas"]),
    item("egg carton stack", [0.34, 0.28, 0.28], &["brown eggs", "white eggs"]),
    item("sample tray", [0.44, 0.16, 0.34], &["cheese samples", "cracker samples"]),
];

const OUTDOOR: &[CatalogItem] = &[
    item("traffic cone", [0.36, 0.62, 0.36], &["orange", "faded"]),
    item("recycling bin", [0.56, 0.92, 0.56], &["lid closed", "lid open"]),
    item("trash can", [0.50, 0.86, 0.50], &["empty", "overflowing"]),
    item("bench", [1.00, 0.50, 0.46], &["dry", "freshly painted"]),
    item("sign board", [0.62, 0.92, 0.10], &["detour", "road closed"]),
    item("bicycle", [0.96, 0.80, 0.34], &["unlocked", "locked"]),
    item("planter", [0.70, 0.50, 0.50], &["with flowers", "empty"]),
    item("delivery box", [0.50, 0.40, 0.40], &["sealed", "opened"]),
    item("wheelbarrow", [0.80, 0.56, 0.56], &["empty", "full of soil"]),
    item("newspaper box", [0.46, 0.96, 0.40], &["stocked", "sold out"]),
];

struct Layout {
    backdrop: Backdrop,
    camera_height: f64,
    pitch: f64,
    /// (x, z, yaw) per station.
    stations: Vec<(f64, f64, f64)>,
    forward: [f64; 3],
    lateral: [f64; 3],
    /// Fixture supporting each slot: (label, size).
    fixture: Option<(&'static str, [f64; 3])>,
    catalog: &'static [CatalogItem],
    initial_fill: usize,
}

fn layout(kind: LocationKind) -> Layout {
    let corridor = |x: f64, z0: f64, step: f64| -> Vec<(f64, f64, f64)> {
        (0..5)
            .map(|i| (x, z0 + step * i as f64, if i % 2 == 0 { 90.0 } else { -90.0 }))
            .collect()
    };
    match kind {
        LocationKind::Office => Layout {
            backdrop: Backdrop::Room {
                bounds: Bbox3D::new([0.0, -2.8, 0.0], [10.0, 0.0, 15.5]).expect("room"),
            },
            camera_height: 1.4,
            pitch: 22.0,
            stations: corridor(5.0, 2.5, 2.6),
            forward: [2.5, 2.3, 2.5],
            lateral: [-0.9, 0.0, 0.9],
            fixture: None,
            catalog: OFFICE,
            initial_fill: 9,
        },
        LocationKind::Grocery => Layout {
            backdrop: Backdrop::Room {
                bounds: Bbox3D::new([0.0, -3.2, 0.0], [10.0, 0.0, 15.5]).expect("room"),
            },
            camera_height: 1.45,
            pitch: 20.0,
            stations: corridor(5.0, 2.5, 2.6),
            forward: [2.4, 2.4, 2.4],
            lateral: [-0.9, 0.0, 0.9],
            fixture: Some(("display table", [0.62, 0.72, 0.52])),
            catalog: GROCERY,
            initial_fill: 10,
        },
        LocationKind::Outdoor => Layout {
            backdrop: Backdrop::Ground,
            camera_height: 1.5,
            pitch: 18.0,
            stations: corridor(0.0, 0.0, 3.4),
            forward: [3.3, 3.1, 3.3],
            lateral: [-1.35, 0.0, 1.35],
            fixture: None,
            catalog: OUTDOOR,
            initial_fill: 8,
        },
    }
}

/// Floor (or fixture top) position of each slot, with its station.
struct Slot {
    station: usize,
    x: f64,
    z: f64,
    support: f64,
}

fn slots(l: &Layout) -> Vec<Slot> {
    let mut out = Vec::new();
    for (s, &(x, z, yaw)) in l.stations.iter().enumerate() {
        let (sy, cy) = yaw.to_radians().sin_cos();
        for j in 0..3 {
            let (f, lat) = (l.forward[j], l.lateral[j]);
            out.push(Slot {
                station: s,
                x: x + sy * f + cy * lat,
                z: z + cy * f - sy * lat,
                support: l.fixture.map_or(0.0, |(_, size)| size[1]),
            });
        }
    }
    out
}

struct Builder {
    rng: ChaCha8Rng,
    next_key: u32,
    next_appearance: u32,
    catalog: &'static [CatalogItem],
}

impl Builder {
    fn appearance(&mut self) -> Appearance {
        let a = Appearance {
            sides: self.next_appearance,
            top: self.next_appearance + 1,
        };
        self.next_appearance += 3;
        a
    }

    fn object(&mut self, slot: &Slot, exclude: &[&str]) -> ObjectInstance {
        let choices: Vec<&CatalogItem> = self.catalog.iter().filter(|c| !exclude.contains(&c.label)).collect();
        let item = choices[self.rng.gen_range(0..choices.len())];
        self.next_key += 1;
        ObjectInstance {
            key: format!("obj-{:03}", self.next_key),
            label: item.label.to_owned(),
            bbox: slot_box(slot, item.size),
            appearance: self.appearance(),
            detail: item.details[0].to_owned(),
        }
    }

    fn next_detail(&self, label: &str, current: &str) -> String {
        let item = self.catalog.iter().find(|c| c.label == label).expect("catalog label");
        let i = item.details.iter().position(|d| *d == current).unwrap_or(0);
        item.details[(i + 1) % item.details.len()].to_owned()
    }
}

fn slot_box(slot: &Slot, size: [f64; 3]) -> Bbox3D {
    let center = [slot.x, -slot.support - size[1] / 2.0, slot.z];
    Bbox3D::from_center_size(center, size).expect("positive size")
}

fn slot_center(slot: &Slot, b: &Bbox3D) -> [f64; 3] {
    [slot.x, -slot.support - b.size()[1] / 2.0, slot.z]
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Kind {
    Appear,
    Remove,
    Content,
    Replace,
    Relocate,
}

/// Change kinds for visits 1..=10; every kind at least four times.
const CHANGE_MIX: [(Kind, usize); 5] = [
    (Kind::Appear, 5),
    (Kind::Remove, 5),
    (Kind::Content, 5),
    (Kind::Replace, 4),
    (Kind::Relocate, 5),
];
const CHANGES_PER_VISIT: [usize; 10] = [2, 3, 2, 3, 2, 3, 2, 2, 3, 2];

fn schedule_changes(b: &mut Builder, slot_list: &[Slot], occupancy: &mut [Option<ObjectInstance>]) -> Vec<Vec<ScriptedChange>> {
    let mut kinds: Vec<Kind> = CHANGE_MIX.iter().flat_map(|&(k, n)| std::iter::repeat_n(k, n)).collect();
    kinds.shuffle(&mut b.rng);
    let mut per_visit = Vec::new();
    for &count in CHANGES_PER_VISIT.iter() {
        let mut changes = Vec::new();
        // Slots touched this visit and events per station.
        let mut touched = vec![false; slot_list.len()];
        let mut station_events = vec![0usize; slot_list.iter().map(|s| s.station).max().unwrap_or(0) + 1];
        let mut attempts = 0;
        while changes.len() < count && !kinds.is_empty() && attempts < 40 {
            attempts += 1;
            let pick = b.rng.gen_range(0..kinds.len().min(3));
            let kind = kinds[pick];
            let free = |i: usize, touched: &[bool], ev: &[usize], cost: usize| {
                !touched[i] && ev[slot_list[i].station] + cost <= 2
            };
            let occupied: Vec<usize> = (0..slot_list.len())
                .filter(|&i| occupancy[i].is_some())
                .collect();
            let empty: Vec<usize> = (0..slot_list.len())
                .filter(|&i| occupancy[i].is_none())
                .collect();
            let change = match kind {
                Kind::Appear => empty
                    .iter()
                    .copied()
                    .filter(|&i| free(i, &touched, &station_events, 1))
                    .collect::<Vec<_>>()
                    .choose(&mut b.rng)
                    .map(|&i| {
                        let o = b.object(&slot_list[i], &[]);
                        occupancy[i] = Some(o.clone());
                        (vec![i], ScriptedChange::Appear { object: o })
                    }),
                Kind::Remove => occupied
                    .iter()
                    .copied()
                    .filter(|&i| free(i, &touched, &station_events, 1))
                    .collect::<Vec<_>>()
                    .choose(&mut b.rng)
                    .map(|&i| {
                        let o = occupancy[i].take().expect("occupied");
                        (vec![i], ScriptedChange::Remove { key: o.key })
                    }),
                Kind::Content => occupied
                    .iter()
                    .copied()
                    .filter(|&i| free(i, &touched, &station_events, 1))
                    .collect::<Vec<_>>()
                    .choose(&mut b.rng)
                    .map(|&i| {
                        let appearance = b.appearance();
                        let o = occupancy[i].as_mut().expect("occupied");
                        let detail = b.next_detail(&o.label, &o.detail);
                        o.appearance = appearance;
                        o.detail = detail.clone();
                        (
                            vec![i],
                            ScriptedChange::ContentChange {
                                key: o.key.clone(),
                                appearance,
                                detail,
                            },
                        )
                    }),
                Kind::Replace => occupied
                    .iter()
                    .copied()
                    .filter(|&i| free(i, &touched, &station_events, 2))
                    .collect::<Vec<_>>()
                    .choose(&mut b.rng)
                    .map(|&i| {
                        let old = occupancy[i].take().expect("occupied");
                        let new = b.object(&slot_list[i], &[old.label.as_str()]);
                        occupancy[i] = Some(new.clone());
                        (vec![i, i], ScriptedChange::Replace { key: old.key, with: new })
                    }),
                Kind::Relocate => {
                    let sources: Vec<usize> = occupied
                        .iter()
                        .copied()
                        .filter(|&i| free(i, &touched, &station_events, 1))
                        .collect();
                    let source = sources.choose(&mut b.rng).copied();
                    source.and_then(|src| {
                        let targets: Vec<usize> = empty
                            .iter()
                            .copied()
                            .filter(|&j| slot_list[j].station != slot_list[src].station)
                            .filter(|&j| free(j, &touched, &station_events, 1))
                            .collect();
                        targets.choose(&mut b.rng).map(|&dst| {
                            let o = occupancy[src].take().expect("occupied");
                            let center = slot_center(&slot_list[dst], &o.bbox);
                            let mut relocated = o.clone();
                            relocated.bbox = moved(&o.bbox, center).expect("size preserved");
                            occupancy[dst] = Some(relocated);
                            (vec![src, dst], ScriptedChange::Relocate { key: o.key, center })
                        })
                    })
                }
            };
            if let Some((used, change)) = change {
                for i in used {
                    touched[i] = true;
                    station_events[slot_list[i].station] += 1;
                }
                changes.push(change);
                kinds.remove(pick);
            }
        }
        per_visit.push(changes);
    }
    per_visit
}

fn wrap_deg(a: f64) -> f64 {
    (a + 180.0).rem_euclid(360.0) - 180.0
}

fn trajectory(l: &Layout, rng: &mut ChaCha8Rng) -> Vec<TimedPose> {
    let mut keyframes: Vec<(Vector3<f64>, f64, f64)> = Vec::new();
    let mut previous: Option<(Vector3<f64>, f64, f64)> = None;
    for &(x, z, yaw) in &l.stations {
        let pos = Vector3::new(
            x + rng.gen_range(-0.08..0.08),
            -l.camera_height + rng.gen_range(-0.03..0.03),
            z + rng.gen_range(-0.08..0.08),
        );
        let heading = yaw + rng.gen_range(-3.0..3.0);
        let pitch = l.pitch + rng.gen_range(-1.0..1.0);
        let first = (pos, heading + PAN_OFFSETS[0], pitch);
        if let Some((p0, y0, pt0)) = previous {
            let dy = wrap_deg(first.1 - y0);
            for s in 1..=WALK_FRAMES {
                let f = s as f64 / (WALK_FRAMES + 1) as f64;
                keyframes.push((p0 + (first.0 - p0) * f, y0 + dy * f, pt0 + (first.2 - pt0) * f));
            }
        }
        for off in PAN_OFFSETS {
            keyframes.push((pos, heading + off, pitch));
        }
        previous = keyframes.last().copied();
    }
    keyframes
        .into_iter()
        .enumerate()
        .map(|(i, (p, yaw, pitch))| TimedPose {
            t: i as f64,
            pose: Pose::from_yaw_pitch(p, wrap_deg(yaw), pitch),
        })
        .collect()
}

pub fn build_location(kind: LocationKind, seed: u64) -> SceneScript {
    let l = layout(kind);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(kind as u64 * 1_000_003));
    let slot_list = slots(&l);
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(rng.gen()),
        next_key: 0,
        next_appearance: 1 + kind as u32 * 1000,
        catalog: l.catalog,
    };

    let mut occupancy: Vec<Option<ObjectInstance>> = vec![None; slot_list.len()];
    let mut order: Vec<usize> = (0..slot_list.len()).collect();
    order.shuffle(&mut b.rng);
    for &i in order.iter().take(l.initial_fill) {
        occupancy[i] = Some(b.object(&slot_list[i], &[]));
    }
    let mut objects: Vec<ObjectInstance> = occupancy.iter().flatten().cloned().collect();
    if let Some((label, size)) = l.fixture {
        for (i, slot) in slot_list.iter().enumerate() {
            let center = [slot.x, -size[1] / 2.0, slot.z];
            objects.push(ObjectInstance {
                key: format!("fixture-{i:02}"),
                label: label.to_owned(),
                bbox: Bbox3D::from_center_size(center, size).expect("fixture"),
                appearance: Appearance { sides: 7, top: 15 },
                detail: String::new(),
            });
        }
    }

    let changes = schedule_changes(&mut b, &slot_list, &mut occupancy);
    let mut visits = Vec::new();
    for v in 0..VISITS_PER_LOCATION {
        visits.push(VisitPlan {
            visit_index: v,
            start_time: v as f64 * SECONDS_PER_DAY,
            changes: if v == 0 { Vec::new() } else { changes[v as usize - 1].clone() },
            trajectory: trajectory(&l, &mut rng),
        });
    }

    SceneScript {
        seed,
        location_id: kind.id().to_owned(),
        backdrop: l.backdrop,
        intrinsics: Intrinsics::new(
            FOCAL,
            FOCAL,
            (FRAME_WIDTH as f64 - 1.0) / 2.0,
            (FRAME_HEIGHT as f64 - 1.0) / 2.0,
            FRAME_WIDTH,
            FRAME_HEIGHT,
        )
        .expect("static intrinsics"),
        objects,
        visits,
        depth_noise: 0.0,
    }
}

/// Office, grocery and outdoor scripts, 11 visits each.
pub fn standard_benchmark(seed: u64) -> Vec<SceneScript> {
    LocationKind::ALL.iter().map(|&k| build_location(k, seed)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame_io::ChangeStatus;
    use std::collections::BTreeMap;

    #[test]
    fn change_accounting() {
        let scripts = standard_benchmark(42);
        let mut total = 0;
        for s in &scripts {
            let mut counts: BTreeMap<ChangeStatus, usize> = BTreeMap::new();
            for v in &s.visits {
                for c in &v.changes {
                    *counts.entry(c.status()).or_default() += 1;
                }
                let secs = v.trajectory.len();
                assert!((30..=60).contains(&secs), "{} visit length {secs}", s.location_id);
            }
            let n: usize = counts.values().sum();
            assert!(n >= 20, "{} has {n} changes", s.location_id);
            for status in ChangeStatus::ALL {
                assert!(counts.get(&status).copied().unwrap_or(0) >= 2, "{} {status:?}", s.location_id);
            }
            total += n;
            // Every change applies cleanly.
            s.state(VISITS_PER_LOCATION - 1).unwrap();
        }
        assert!(total >= 60);
    }

    #[test]
    fn objects_sit_below_camera() {
        for s in standard_benchmark(5) {
            for v in 0..VISITS_PER_LOCATION {
                for o in s.state_list(v).unwrap() {
                    assert!(o.bbox.min[1] > -1.4, "{} too tall", o.label);
                    assert!(o.bbox.max[1] <= 1e-9);
                }
            }
        }
    }
}
