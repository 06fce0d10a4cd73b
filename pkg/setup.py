"""
Usage:
	pip install .

Build a source distribution:
	python3 setup.py sdist

The pyproject.toml is the primary manifest; this file mirrors it for tools that
still call setup.py directly.
"""

from setuptools import setup

setup(
	name='spinamp',
	version='0.1.0',
	license="MIT",
	description='Instability spectra of spin-changing collisions in trapped spinor condensates',
	long_description=open('README.md').read(),
	long_description_content_type='text/markdown',
	py_modules=['spinamp', 'spinamp_cli'],
	data_files=[
		('presets/species', ['presets/species/rb87_f1.yaml', 'presets/species/rb87_f2.yaml']),
		('presets/scenarios', [
			'presets/scenarios/f2_hannover.yaml',
			'presets/scenarios/f1_leslie.yaml',
			'presets/scenarios/box_oracle.yaml',
		]),
	],
	install_requires=['numpy>=1.21', 'scipy>=1.8', 'PyYAML>=6.0'],
	entry_points={
		'console_scripts' : [
			'spinamp=spinamp_cli:main'
		]
	}
)
