"""Finite-difference generators for the Laplace, heat and Burgers datasets."""
from .container import MAGIC, dataset_bytes, dataset_from_bytes, load_dataset, save_dataset
from .datasets import (EQUATIONS, GENERATORS, Dataset, Sample, default_grid, generate_burgers,
                       generate_heat, generate_laplace)
from .solvers import (CflWarning, GridSpec, boundary_indices, burgers_step, cfl_check, cfl_number,
                      corner_indices, edge_mask, heat_step, laplace_step)
