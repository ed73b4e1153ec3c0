mod support;

use proptest::prelude::*;
use support::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn combiner_coefficients_are_convex(case in combiner_case()) {
        combiner_normalization(&case)?;
    }

    #[test]
    fn assignments_satisfy_row_and_column_constraints(case in assignment_case()) {
        assignment_constraints(&case)?;
    }

    #[test]
    fn allocations_are_feasible(case in allocation_case()) {
        allocation_feasibility(&case)?;
    }

    #[test]
    fn energies_are_positive(case in energy_case()) {
        energy_positivity(&case)?;
    }

    #[test]
    fn runs_reproduce_byte_for_byte(case in manifest_case()) {
        manifest_reproducibility(&case)?;
    }
}
