use crate::schema::Schema;

/// Student/course/prof schema with a course-course self-relation.
pub(crate) fn example2() -> Schema {
    Schema::builder()
        .entity("student", 5)
        .entity("course", 4)
        .entity("prof", 3)
        .relation("takes", &["student", "course"])
        .relation("prereq", &["course", "course"])
        .relation("refs", &["student", "prof"])
        .build()
        .unwrap()
}

/// Small deterministic integer stream for index sampling in tests.
pub(crate) fn lcg(seed: u64) -> impl FnMut() -> usize {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 33) as usize
    }
}
