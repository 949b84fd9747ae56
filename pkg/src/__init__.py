"""TSAW / SRBP Lab - simulation and numerical verification package."""
