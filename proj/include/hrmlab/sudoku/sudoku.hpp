#pragma once

// Sudoku data for the lab: oracle backtracking solver, seeded generation,
// symmetry augmentation, token encoding and the two accuracy metrics.
// Grids are flat row-major vectors of ints, 0 = blank.

#include "hrmlab/common.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hrmlab::sudoku {

using Grid = std::vector<int>;

struct PuzzleInstance {
    int side = 9;
    Grid givens;   // side*side, 0 = blank
    Grid solution; // side*side, all in 1..side

    bool operator==(const PuzzleInstance&) const = default;
};

struct EncodedExample {
    std::vector<int32_t> input;  // ids 0..side (0 = blank)
    std::vector<int32_t> target; // ids 1..side
};

void require_side(int side); // side must be 4 or 9

// True iff no row, column or box contains a duplicate nonzero value.
bool check_valid(const Grid& grid, int side);

// First solution in deterministic order (row-major cell, ascending value).
// Contradictory givens are a precondition error; a valid-but-unsatisfiable
// grid returns nullopt.
std::optional<Grid> solve_backtracking(const Grid& givens, int side);

// Full grid by seeded randomized backtracking, then `blanks` cells removed.
std::vector<PuzzleInstance> generate_dataset(int count, int side, int blanks, uint64_t seed);

// digit_perm: permutation of 1..side (digit d -> digit_perm[d-1]).
// band_perm / stack_perm: permutations of the sqrt(side) row-bands and
// column-stacks. Transpose is applied first, then band/stack moves, then the
// digit relabel.
PuzzleInstance augment(const PuzzleInstance& p, const std::vector<int>& digit_perm, bool transpose,
                       const std::vector<int>& band_perm, const std::vector<int>& stack_perm);

struct AugmentParams {
    std::vector<int> digit_perm;
    bool transpose = false;
    std::vector<int> band_perm;
    std::vector<int> stack_perm;
};
AugmentParams random_augment_params(int side, Rng& rng);

EncodedExample encode(const PuzzleInstance& p);
PuzzleInstance decode(const EncodedExample& e, int side);

double token_accuracy(std::span<const int32_t> pred, std::span<const int32_t> target);
int exact_accuracy(std::span<const int32_t> pred, std::span<const int32_t> target);

// CSV: one `givens,solution` record per line, side^2 chars per field, '.'
// or '0' for blanks in givens; optional header detected by a non-grid first
// field. Every record is re-validated; failures name the line.
std::vector<PuzzleInstance> parse_dataset_file(const std::string& path);
void write_dataset_file(const std::string& path, const std::vector<PuzzleInstance>& items);

std::string grid_to_string(const Grid& g);

} // namespace hrmlab::sudoku
