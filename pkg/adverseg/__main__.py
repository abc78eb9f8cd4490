"""Entry point for running adverseg as a module."""

from adverseg.cli import app

if __name__ == "__main__":
    app()
