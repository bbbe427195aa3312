"""Unsupervised discovery of discriminable, maze-covering skill trees."""
from .algo import UpsideConfig, run, run_baseline, run_upside, select_model
from .env import MAZES, MazeSpec, load_maze

__all__ = ["MAZES", "MazeSpec", "UpsideConfig", "load_maze", "run", "run_baseline",
           "run_upside", "select_model"]
__version__ = "0.1.0"
