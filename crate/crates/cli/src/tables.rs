//! Bundled reference data for the demo commands.

/// One-letter code, average residue mass in daltons, and whole-residue
/// interface hydrophobicity (positive = hydrophobic).
pub const AMINO_ACIDS: [(char, f64, f64); 20] = [
    ('A', 71.0788, -0.17),
    ('R', 156.1875, -0.81),
    ('N', 114.1038, -0.42),
    ('D', 115.0886, -1.23),
    ('C', 103.1388, 0.24),
    ('E', 129.1155, -2.02),
    ('Q', 128.1307, -0.58),
    ('G', 57.0519, -0.01),
    ('H', 137.1411, -0.96),
    ('I', 113.1594, 0.31),
    ('L', 113.1594, 0.56),
    ('K', 128.1723, -0.99),
    ('M', 131.1926, 0.23),
    ('F', 147.1766, 1.13),
    ('P', 97.1167, -0.45),
    ('S', 87.0782, -0.13),
    ('T', 101.1051, -0.14),
    ('W', 186.2132, 1.85),
    ('Y', 163.1760, 0.94),
    ('V', 99.1326, -0.07),
];

pub fn amino_acid(code: char) -> Option<(f64, f64)> {
    AMINO_ACIDS
        .iter()
        .find(|(c, _, _)| *c == code)
        .map(|(_, m, h)| (*m, *h))
}

/// The lightest residue; bounds how many residues can fit in a mass.
pub const LIGHTEST_RESIDUE_MASS: f64 = 57.0;

#[derive(Debug, Clone, Copy)]
pub struct Nuclide {
    pub mass_da: f64,
    pub abundance: f64,
}

const fn nu(mass_da: f64, abundance: f64) -> Nuclide {
    Nuclide { mass_da, abundance }
}

/// Naturally occurring isotope distributions for the demo elements.
pub const ELEMENTS: [(&str, &[Nuclide]); 14] = [
    ("Ar", &[
        nu(35.9675, 0.003365),
        nu(37.9627, 0.000632),
        nu(39.9624, 0.996003),
    ]),
    ("Ca", &[
        nu(39.9626, 0.96941),
        nu(41.9586, 0.00647),
        nu(42.9588, 0.00135),
        nu(43.9555, 0.02086),
        nu(45.9537, 0.00004),
        nu(47.9525, 0.00187),
    ]),
    ("Cl", &[nu(34.9689, 0.7576), nu(36.9659, 0.2424)]),
    ("Co", &[nu(58.9332, 1.0)]),
    ("Cr", &[
        nu(49.9460, 0.04345),
        nu(51.9405, 0.83789),
        nu(52.9407, 0.09501),
        nu(53.9389, 0.02365),
    ]),
    ("Fe", &[
        nu(53.9396, 0.05845),
        nu(55.9349, 0.91754),
        nu(56.9354, 0.02119),
        nu(57.9333, 0.00282),
    ]),
    ("Ge", &[
        nu(69.9242, 0.2057),
        nu(71.9221, 0.2745),
        nu(72.9235, 0.0775),
        nu(73.9212, 0.3650),
        nu(75.9214, 0.0773),
    ]),
    ("K", &[
        nu(38.9637, 0.932581),
        nu(39.9640, 0.000117),
        nu(40.9618, 0.067302),
    ]),
    ("Mn", &[nu(54.9380, 1.0)]),
    ("Ni", &[
        nu(57.9353, 0.68077),
        nu(59.9308, 0.26223),
        nu(60.9311, 0.011399),
        nu(61.9283, 0.036346),
        nu(63.9280, 0.009255),
    ]),
    ("S", &[
        nu(31.9721, 0.9499),
        nu(32.9715, 0.0075),
        nu(33.9679, 0.0425),
        nu(35.9671, 0.0001),
    ]),
    ("Ti", &[
        nu(45.9526, 0.0825),
        nu(46.9518, 0.0744),
        nu(47.9479, 0.7372),
        nu(48.9479, 0.0541),
        nu(49.9448, 0.0518),
    ]),
    ("V", &[nu(49.9472, 0.0025), nu(50.9440, 0.9975)]),
    ("Zn", &[
        nu(63.9291, 0.4917),
        nu(65.9260, 0.2773),
        nu(66.9271, 0.0404),
        nu(67.9248, 0.1845),
        nu(69.9253, 0.0061),
    ]),
];

pub fn element(symbol: &str) -> Option<&'static [Nuclide]> {
    ELEMENTS
        .iter()
        .find(|(s, _)| *s == symbol)
        .map(|(_, n)| *n)
}

/// Menu prices in quarter-dollar units; every price divides by $0.25.
pub const MENU_QUARTERS: [i64; 12] = [9, 14, 19, 20, 21, 26, 31, 32, 37, 42, 47, 48];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinned_reference_values_hold() {
        let (mass, hydro) = amino_acid('K').unwrap();
        assert_eq!(mass, 128.1723);
        assert_eq!(hydro, -0.99);
        assert_eq!(element("Ar").unwrap()[0].abundance, 0.003365);
        assert!(amino_acid('B').is_none());
        assert!(element("Xx").is_none());
    }

    #[test]
    fn demo_peptide_totals_match_the_published_targets() {
        let total = |f: fn(&(char, f64, f64)) -> f64| -> f64 {
            "EEAMPK"
                .chars()
                .map(|c| {
                    f(AMINO_ACIDS.iter().find(|(a, _, _)| *a == c).unwrap())
                })
                .sum()
        };
        let mass = total(|t| t.1);
        let hydro = total(|t| t.2);
        assert!((mass - 685.7914).abs() < 1e-9, "{mass}");
        assert!((hydro - -5.42).abs() < 1e-9, "{hydro}");
    }

    #[test]
    fn isotope_fractions_sum_to_one_per_element() {
        for (sym, nuclides) in ELEMENTS {
            let total: f64 = nuclides.iter().map(|n| n.abundance).sum();
            assert!((total - 1.0).abs() < 2e-4, "{sym} sums to {total}");
        }
    }
}
