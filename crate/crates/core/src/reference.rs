//! Bundled scenarios: the 6-configuration toy, the parameterised scaling
//! family and the 135-configuration video surveillance application.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::app::{
    Application, ComponentVariant, Conduct, Configuration, Endpoint, Group, Link, Placement, ProcessorSlot,
    ResourceScaling, Station, SubGroup, TransferFunction, TransferRule,
};
use crate::context::{ContextAction, ContextEvent};
use crate::ids::{CharId, SlotId};
use crate::qos::{Characteristic, CriterionKind, NetworkEffect, Polarity, UserProfile, WishFunction};
use crate::scenario::{Parameters, Scenario};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error(
    "unknown reference scenario `{0}` (expected surveillance135, surveillance135-oscillating, toy6 or scaling(n,v,s))"
)]
pub struct UnknownName(pub String);

pub const SURVEILLANCE: &str = "surveillance135";
pub const SURVEILLANCE_OSCILLATING: &str = "surveillance135-oscillating";
pub const TOY: &str = "toy6";

/// Builds a bundled scenario by name. `scaling(n,v,s)` takes three positive
/// integers.
pub fn generate_reference_scenario(name: &str) -> Result<Scenario, UnknownName> {
    match name {
        SURVEILLANCE => Ok(surveillance135()),
        SURVEILLANCE_OSCILLATING => Ok(surveillance135_oscillating(10)),
        TOY => Ok(toy6()),
        other => parse_scaling(other).map(|(n, v, s)| scaling(n, v, s)).ok_or_else(|| UnknownName(String::from(name))),
    }
}

fn parse_scaling(name: &str) -> Option<(usize, usize, usize)> {
    let inner = name.strip_prefix("scaling(")?.strip_suffix(')')?;
    let mut it = inner.split(',').map(|x| x.trim().parse::<usize>().ok().filter(|&k| k > 0));
    let n = it.next()??;
    let v = it.next()??;
    let s = it.next()??;
    if it.next().is_some() {
        return None;
    }
    Some((n, v, s))
}

fn characteristic(id: &str, kind: CriterionKind, unit: &str, description: &str) -> Characteristic {
    Characteristic {
        id: id.into(),
        kind,
        unit: String::from(unit),
        description: String::from(description),
        better: Polarity::HigherIsBetter,
        network: NetworkEffect::None,
        probe: None,
    }
}

fn flow(
    id: &str,
    unit: &str,
    description: &str,
    better: Polarity,
    network: NetworkEffect,
    probe: &str,
) -> Characteristic {
    Characteristic {
        better,
        network,
        probe: Some(probe.into()),
        ..characteristic(id, CriterionKind::Contextual, unit, description)
    }
}

fn rule(a: f64, b: f64, resource: ResourceScaling) -> TransferRule {
    TransferRule { a, b, lo: 0.0, hi: 1e9, resource }
}

fn variant(
    id: &str,
    rank: i64,
    cpu: f64,
    intrinsic: &[(&str, f64)],
    rules: &[(&str, TransferRule)],
) -> ComponentVariant {
    let mut transfer = TransferFunction::default();
    for (ch, r) in rules {
        transfer.set("out", *ch, *r);
    }
    ComponentVariant {
        id: id.into(),
        power_rank: rank,
        cpu_demand: cpu,
        intrinsic: intrinsic.iter().map(|(c, m)| (CharId::from(*c), *m)).collect(),
        transfer,
    }
}

fn slot(
    id: &str,
    has_input: bool,
    has_output: bool,
    stations: Option<&[&str]>,
    variants: Vec<ComponentVariant>,
) -> ProcessorSlot {
    ProcessorSlot {
        id: id.into(),
        inputs: if has_input { vec!["in".into()] } else { vec![] },
        outputs: if has_output { vec!["out".into()] } else { vec![] },
        stations: stations.map(|s| s.iter().map(|x| (*x).into()).collect()),
        variants,
    }
}

fn conduct(id: &str, from: &str, to: &str, carries: &[&str]) -> Conduct {
    Conduct {
        id: id.into(),
        source: Endpoint::new(from, "out"),
        sink: Endpoint::new(to, "in"),
        carries: carries.iter().map(|c| (*c).into()).collect(),
        loopback: false,
    }
}

fn link(id: &str, a: &str, b: &str, bandwidth: f64, latency: f64) -> Link {
    Link { id: id.into(), endpoints: (a.into(), b.into()), bandwidth, latency }
}

fn station(id: &str, capacity: f64, base_load: f64) -> Station {
    Station { id: id.into(), capacity, base_load }
}

fn load(at: u64, station: &str, value: f64) -> ContextEvent {
    ContextEvent::new(at, ContextAction::SetStationLoad { station: station.into(), value })
}

/// Two slots with 2 and 3 variants on one station.
pub fn toy6() -> Scenario {
    let source = [("frame_rate", rule(0.0, 30.0, ResourceScaling::Scale))];
    let application = Application {
        characteristics: vec![
            characteristic("quality", CriterionKind::Intrinsic, "mark", "picture quality"),
            flow("frame_rate", "frames/s", "delivered frame rate", Polarity::HigherIsBetter, NetworkEffect::None, "ev"),
        ],
        groups: vec![Group {
            id: "player".into(),
            subgroups: vec![SubGroup {
                id: "playback".into(),
                characteristics: vec!["quality".into(), "frame_rate".into()],
                slots: vec![
                    slot(
                        "encoder",
                        false,
                        true,
                        None,
                        vec![
                            variant("e1", 1, 20.0, &[("quality", 0.5)], &source),
                            variant("e2", 2, 50.0, &[("quality", 0.9)], &source),
                        ],
                    ),
                    slot(
                        "viewer",
                        true,
                        false,
                        None,
                        vec![
                            variant("v1", 1, 10.0, &[("quality", 0.6)], &[]),
                            variant("v2", 2, 30.0, &[("quality", 0.8)], &[]),
                            variant("v3", 3, 80.0, &[("quality", 1.0)], &[]),
                        ],
                    ),
                ],
                conducts: vec![conduct("ev", "encoder", "viewer", &["frame_rate"])],
            }],
        }],
        stations: vec![station("host", 100.0, 0.0)],
        links: vec![],
        routes: vec![],
    };
    let user = UserProfile {
        wishes: vec![
            WishFunction::new("quality", vec![(0.0, 0.0), (1.0, 1.0)], 1.0),
            WishFunction::new("frame_rate", vec![(0.0, 0.0), (30.0, 1.0)], 1.0),
        ],
        ..Default::default()
    };
    let default_configuration = Configuration::default().place("encoder", "e1", "host").place("viewer", "v1", "host");
    Scenario {
        name: String::from(TOY),
        description: String::from("Two slots with 2 and 3 variants sharing one station."),
        application,
        user,
        default_configuration,
        spies: vec![],
        events: vec![load(500, "host", 90.0)],
        initial_environment: BTreeMap::new(),
        parameters: Parameters { horizon_ms: 2000, ..Parameters::default() },
    }
}

fn pad(prefix: &str, i: usize) -> String {
    format!("{prefix}{i:02}")
}

/// A chain of `n` slots, `v` variants each, over `s` fully connected
/// stations; consecutive slots pair up into Sub-Groups.
pub fn scaling(n: usize, v: usize, s: usize) -> Scenario {
    let stations: Vec<String> = (0..s).map(|i| pad("s", i)).collect();
    let subgroups = n.div_ceil(2);
    let mut characteristics: Vec<Characteristic> = (0..subgroups)
        .map(|g| characteristic(&pad("q", g), CriterionKind::Intrinsic, "mark", "stage quality"))
        .collect();
    let last = pad("c", n.saturating_sub(2));
    let has_flow = n >= 2;
    if has_flow {
        characteristics.push(flow(
            "frame_rate",
            "frames/s",
            "output frame rate",
            Polarity::HigherIsBetter,
            NetworkEffect::None,
            &last,
        ));
        characteristics.push(flow(
            "latency",
            "ms",
            "end-to-end latency",
            Polarity::LowerIsBetter,
            NetworkEffect::Delay,
            &last,
        ));
    }

    let mut sgs = Vec::new();
    for g in 0..subgroups {
        let q = pad("q", g);
        let mut slots = Vec::new();
        let mut conducts = Vec::new();
        for k in (2 * g)..(2 * g + 2).min(n) {
            let first = k == 0;
            let rules: Vec<(&str, TransferRule)> = if !has_flow || k + 1 == n {
                vec![]
            } else if first {
                vec![
                    ("frame_rate", rule(0.0, 30.0, ResourceScaling::Scale)),
                    ("latency", rule(0.0, 4.0, ResourceScaling::Stretch)),
                ]
            } else {
                vec![
                    ("frame_rate", rule(1.0, 0.0, ResourceScaling::Scale)),
                    ("latency", rule(1.0, 4.0, ResourceScaling::Stretch)),
                ]
            };
            let variants = (0..v)
                .map(|r| {
                    let quality = if v == 1 { 1.0 } else { 0.4 + 0.6 * r as f64 / (v - 1) as f64 };
                    variant(&pad("v", r), r as i64 + 1, 5.0 + 10.0 * r as f64, &[(q.as_str(), quality)], &rules)
                })
                .collect();
            slots.push(slot(&pad("p", k), k > 0, k + 1 < n, None, variants));
            if k + 1 < n {
                conducts.push(conduct(&pad("c", k), &pad("p", k), &pad("p", k + 1), &["frame_rate", "latency"]));
            }
        }
        let mut listed = vec![CharId::from(q.as_str())];
        if g + 1 == subgroups && has_flow {
            listed.push("frame_rate".into());
            listed.push("latency".into());
        }
        sgs.push(SubGroup { id: pad("sg", g).into(), characteristics: listed, slots, conducts });
    }

    let mut links = Vec::new();
    for i in 0..s {
        for j in (i + 1)..s {
            links.push(link(&format!("l{i:02}_{j:02}"), &stations[i], &stations[j], 10_000.0, 3.0));
        }
    }
    let application = Application {
        characteristics,
        groups: vec![Group { id: "pipeline".into(), subgroups: sgs }],
        stations: stations.iter().map(|id| station(id, 100.0, 0.0)).collect(),
        links,
        routes: vec![],
    };

    let mut wishes: Vec<WishFunction> =
        (0..subgroups).map(|g| WishFunction::new(pad("q", g), vec![(0.0, 0.0), (1.0, 1.0)], 1.0)).collect();
    if has_flow {
        wishes.push(WishFunction::new("frame_rate", vec![(0.0, 0.0), (30.0, 1.0)], 1.0));
        let worst = 20.0 * n as f64 + 40.0;
        wishes.push(WishFunction::new("latency", vec![(5.0 * n as f64, 1.0), (worst, 0.0)], 1.0));
    }
    let user = UserProfile { wishes, ..Default::default() };

    let placement: BTreeMap<SlotId, Placement> =
        (0..n).map(|k| (SlotId::from(pad("p", k)), Placement::new(pad("v", 0), stations[k % s].clone()))).collect();
    Scenario {
        name: format!("scaling({n},{v},{s})"),
        description: format!("Chain of {n} slots with {v} variants over {s} stations."),
        application,
        user,
        default_configuration: Configuration { placement, routes: BTreeMap::new() },
        spies: vec![],
        events: vec![load(1000, &stations[0], 60.0)],
        initial_environment: BTreeMap::new(),
        parameters: Parameters { horizon_ms: 3000, ..Parameters::default() },
    }
}

/// Camera, compression, picture processing and display over three stations.
///
/// Capture is pinned to S1 and display to S3; compression has 3 variants and
/// processing 5, each placeable on any station, for 1·9·15·1 = 135
/// configurations. The script: S1 starts busy but unsaturated, its load eases,
/// then S1 saturates, recovers and saturates again.
pub fn surveillance135() -> Scenario {
    let mut sc = surveillance_base();
    sc.name = String::from(SURVEILLANCE);
    sc.description = String::from(
        "Video surveillance: capture on S1, compression (3 variants), picture processing (5 variants), display on S3.",
    );
    sc.events =
        vec![load(1500, "S1", 10.0), load(5000, "S1", 100.0), load(7500, "S1", 10.0), load(10_000, "S1", 100.0)];
    sc.parameters.horizon_ms = 12_000;
    sc
}

/// The same application under `alternations` switches of S1 between
/// saturated and relaxed, 1.5 s apart, after the initial easing.
pub fn surveillance135_oscillating(alternations: usize) -> Scenario {
    let mut sc = surveillance_base();
    sc.name = String::from(SURVEILLANCE_OSCILLATING);
    sc.description = format!("Video surveillance with S1 alternating saturated/relaxed {alternations} times.");
    let mut events = vec![load(1500, "S1", 10.0)];
    for i in 0..alternations {
        let value = if i % 2 == 0 { 100.0 } else { 10.0 };
        events.push(load(4000 + 1500 * i as u64, "S1", value));
    }
    sc.parameters.horizon_ms = 4000 + 1500 * alternations as u64 + 1500;
    sc.events = events;
    sc
}

fn surveillance_base() -> Scenario {
    use ResourceScaling::{Scale, Stretch};
    let fr = "frame_rate";
    let lat = "latency";
    let bitrate = "bitrate";

    let capture = slot(
        "capture",
        false,
        true,
        Some(&["S1"]),
        vec![variant("camera", 1, 10.0, &[], &[(fr, rule(0.0, 25.0, Scale)), (lat, rule(0.0, 20.0, Stretch))])],
    );
    let codec = |id: &str, rank: i64, cpu: f64, fidelity: f64, kbps: f64| {
        variant(
            id,
            rank,
            cpu,
            &[("fidelity", fidelity)],
            &[
                (fr, rule(1.0, 0.0, Scale)),
                (lat, rule(1.0, 10.0, Stretch)),
                (bitrate, rule(0.0, kbps, ResourceScaling::None)),
            ],
        )
    };
    let compression = slot(
        "compression",
        true,
        true,
        None,
        vec![
            codec("mjpeg_low", 1, 15.0, 0.6, 1000.0),
            codec("mjpeg_high", 2, 25.0, 0.8, 2000.0),
            codec("h264", 3, 40.0, 1.0, 3000.0),
        ],
    );
    let analyser = |id: &str, rank: i64, cpu: f64, quality: f64| {
        variant(
            id,
            rank,
            cpu,
            &[("analysis", quality)],
            &[(fr, rule(1.0, 0.0, Scale)), (lat, rule(1.0, 20.0, Stretch))],
        )
    };
    let processing = slot(
        "processing",
        true,
        true,
        None,
        vec![
            analyser("motion", 1, 15.0, 0.50),
            analyser("motion_zones", 2, 25.0, 0.62),
            analyser("tracking", 3, 35.0, 0.74),
            analyser("tracking_multi", 4, 45.0, 0.86),
            analyser("recognition", 5, 60.0, 0.98),
        ],
    );
    let display = slot("display", true, false, Some(&["S3"]), vec![variant("monitor", 1, 0.0, &[], &[])]);

    let application = Application {
        characteristics: vec![
            characteristic("fidelity", CriterionKind::Intrinsic, "mark", "image fidelity after compression"),
            characteristic("analysis", CriterionKind::Intrinsic, "mark", "picture analysis quality"),
            flow(
                fr,
                "frames/s",
                "frame rate reaching the display",
                Polarity::HigherIsBetter,
                NetworkEffect::None,
                "pd",
            ),
            flow(lat, "ms", "capture-to-display latency", Polarity::LowerIsBetter, NetworkEffect::Delay, "pd"),
            flow(
                bitrate,
                "kbit/s",
                "compressed stream bitrate",
                Polarity::HigherIsBetter,
                NetworkEffect::Bandwidth,
                "cp",
            ),
        ],
        groups: vec![Group {
            id: "surveillance".into(),
            subgroups: vec![
                SubGroup {
                    id: "acquisition".into(),
                    characteristics: vec!["fidelity".into(), bitrate.into()],
                    slots: vec![capture, compression],
                    conducts: vec![
                        conduct("cc", "capture", "compression", &[fr, lat]),
                        conduct("cp", "compression", "processing", &[fr, lat, bitrate]),
                    ],
                },
                SubGroup {
                    id: "analysis".into(),
                    characteristics: vec!["analysis".into(), fr.into(), lat.into()],
                    slots: vec![processing, display],
                    conducts: vec![conduct("pd", "processing", "display", &[fr, lat])],
                },
            ],
        }],
        stations: vec![station("S1", 100.0, 90.0), station("S2", 100.0, 0.0), station("S3", 100.0, 0.0)],
        links: vec![
            link("S1-S2", "S1", "S2", 8000.0, 10.0),
            link("S2-S3", "S2", "S3", 8000.0, 10.0),
            link("S1-S3", "S1", "S3", 4000.0, 30.0),
        ],
        routes: vec![],
    };
    let user = UserProfile {
        wishes: vec![
            WishFunction::new("fidelity", vec![(0.0, 0.0), (1.0, 1.0)], 1.0),
            WishFunction::new("analysis", vec![(0.0, 0.0), (1.0, 1.0)], 1.0),
            WishFunction::new(fr, vec![(5.0, 0.0), (25.0, 1.0)], 1.0),
            WishFunction::new(lat, vec![(100.0, 1.0), (400.0, 0.0)], 1.0),
            WishFunction::new(bitrate, vec![(0.0, 0.0), (500.0, 1.0)], 0.5),
        ],
        ..Default::default()
    };
    let default_configuration = Configuration::default()
        .place("capture", "camera", "S1")
        .place("compression", "mjpeg_low", "S1")
        .place("processing", "motion", "S1")
        .place("display", "monitor", "S3");
    Scenario {
        name: String::new(),
        description: String::new(),
        application,
        user,
        default_configuration,
        spies: vec![],
        events: vec![],
        initial_environment: BTreeMap::new(),
        parameters: Parameters::default(),
    }
}
