//! Bundled scenarios reproducing the evaluation figures.

use crate::Scenario;

const PRESETS: [(&str, &str); 10] = [
    ("fig3", include_str!("../presets/fig3.json")),
    ("fig4", include_str!("../presets/fig4.json")),
    ("fig5", include_str!("../presets/fig5.json")),
    ("fig6", include_str!("../presets/fig6.json")),
    ("fig7", include_str!("../presets/fig7.json")),
    ("fig8", include_str!("../presets/fig8.json")),
    ("fig9", include_str!("../presets/fig9.json")),
    ("fig10", include_str!("../presets/fig10.json")),
    ("fig11", include_str!("../presets/fig11.json")),
    ("fig12", include_str!("../presets/fig12.json")),
];

pub fn list_presets() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.0).collect()
}

pub fn preset_source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|p| p.0 == name).map(|p| p.1)
}

pub fn preset(name: &str) -> Option<Scenario> {
    preset_source(name).map(|src| Scenario::from_json(src).expect("bundled preset parses"))
}
