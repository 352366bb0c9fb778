//! Structure names and overlay colours.

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassEntry {
    pub index: u8,
    pub abbreviation: &'static str,
    pub name: &'static str,
    pub color_name: &'static str,
    pub rgb: [u8; 3],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassTable {
    entries: Vec<ClassEntry>,
}

pub const BACKGROUND_RGB: [u8; 3] = [0, 0, 0];

const STANDARD: [(&str, &str, &str, [u8; 3]); 13] = [
    ("SP", "Spine", "Maroon", [128, 0, 0]),
    ("RiB", "Ribs", "Green", [0, 128, 0]),
    ("LA", "Left Atrium", "Olive", [128, 128, 0]),
    ("IS", "Interatrial Septum", "Navy", [0, 0, 128]),
    ("RA", "Right Atrium", "Purple", [128, 0, 128]),
    ("RV", "Right Ventricle", "Teal", [0, 128, 128]),
    ("LV", "Left Ventricle", "Gray", [128, 128, 128]),
    ("VS", "Ventricular Septum", "Dark red", [139, 0, 0]),
    ("LVW", "Left Ventricular Wall", "Bright red", [255, 0, 0]),
    ("RVW", "Right Ventricular Wall", "Dark olive green", [85, 107, 47]),
    ("DAO", "Descending Aorta", "Dark orange", [255, 140, 0]),
    ("RL", "Right Lung", "Indigo", [75, 0, 130]),
    ("LL", "Left Lung", "Deep pink", [255, 20, 147]),
];

impl ClassTable {
    /// The thirteen fetal four-chamber structures, indices 1..=13.
    pub fn standard() -> Self {
        ClassTable {
            entries: STANDARD
                .iter()
                .enumerate()
                .map(|(i, &(abbreviation, name, color_name, rgb))| ClassEntry {
                    index: i as u8 + 1,
                    abbreviation,
                    name,
                    color_name,
                    rgb,
                })
                .collect(),
        }
    }

    pub fn entries(&self) -> &[ClassEntry] {
        &self.entries
    }

    /// Colour for a class index; 0 and unknown indices are background.
    pub fn color(&self, index: u8) -> [u8; 3] {
        self.entries
            .iter()
            .find(|e| e.index == index)
            .map_or(BACKGROUND_RGB, |e| e.rgb)
    }

    pub fn by_abbreviation(&self, abbr: &str) -> Option<&ClassEntry> {
        self.entries.iter().find(|e| e.abbreviation == abbr)
    }
}
