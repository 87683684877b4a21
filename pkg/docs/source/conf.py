# Configuration file for the Sphinx documentation builder.
#
# https://www.sphinx-doc.org/en/master/usage/configuration.html

# -- Project information -----------------------------------------------------

project = "fidmix"
copyright = "2024, Argonne National Laboratory"
author = "Mark Wolfman"

# The full version, including alpha/beta/rc tags
release = "0.1.0"


# -- General configuration ---------------------------------------------------

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.autosummary",
    "sphinx.ext.mathjax",
    "autoapi.sphinx",
    "sphinx.ext.napoleon",
    "sphinx.ext.todo",
]

autoapi_modules = {"fidmix": None}
autodoc_typehints = "description"
napoleon_numpy_docstring = True

templates_path = ["_templates"]
exclude_patterns = ["_build", "Thumbs.db", ".DS_Store"]


# -- Options for HTML output -------------------------------------------------

html_theme = "classic"
html_static_path = []
