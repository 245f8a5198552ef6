# type: ignore

#
# digflow documentation build configuration file.
#
# This file is execfile()d with the current directory set to its
# containing dir.
#

import os
import re
import sys

# The package lives one directory up.
sys.path.insert(0, os.path.abspath(".."))

# -- General configuration ------------------------------------------------

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.intersphinx",
    "sphinx.ext.mathjax",
    "sphinx.ext.napoleon",
    "sphinx_copybutton",
]

autodoc_member_order = "bysource"
autodoc_typehints = "none"

# Links used for cross-referencing stuff in other documentation
intersphinx_mapping = {
    "py": ("https://docs.python.org/3", None),
    "numpy": ("https://numpy.org/doc/stable/", None),
    "scipy": ("https://docs.scipy.org/doc/scipy/", None),
    "torch": ("https://pytorch.org/docs/stable/", None),
    "pynacl": ("https://pynacl.readthedocs.io/en/latest", None),
}

# The suffix of source filenames.
source_suffix = ".rst"

# The master toctree document.
master_doc = "index"

# General information about the project.
project = "digflow"
copyright = "2026-present, digflow contributors"

# The short X.Y version.
version = ""
with open("../digflow/__init__.py") as f:
    version = re.search(r"__version__ = \"([^\"]+)\"", f.read(), re.MULTILINE).group(1)

# The full version, including alpha/beta/rc tags.
release = version

language = "en"

# List of patterns, relative to source directory, that match files and
# directories to ignore when looking for source files.
exclude_patterns = ["_build"]

# The name of the Pygments (syntax highlighting) style to use.
pygments_style = "lovelace"
pygments_dark_style = "stata-dark"

# -- Options for HTML output ----------------------------------------------

html_theme = "furo"

html_title = "digflow"

html_theme_options = {
    "light_css_variables": {
        "color-brand-primary": "#2A6FDE",
        "color-brand-content": "#2A6FDE",
        "color-api-pre-name": "#39B3A4",
        "color-api-name": "#39B3A4",
    },
    "dark_css_variables": {
        "color-brand-primary": "#6aa6ff",
        "color-brand-content": "#6aa6ff",
    },
}

# Output file base name for HTML help builder.
htmlhelp_basename = "digflow.pydoc"

# -- Options for manual page output ---------------------------------------

man_pages = [("index", "digflow", "digflow Documentation", ["digflow contributors"], 1)]
