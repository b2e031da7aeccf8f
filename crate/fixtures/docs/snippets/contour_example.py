from paraview.simple import *

# Read the dataset and contour it at a single value.
wavelet = OpenDataFile('wavelet.vti')
contour = Contour(Input=wavelet, ContourBy=('POINTS', 'RTData'), Isosurfaces=[157.0])

view = GetActiveViewOrCreate('RenderView')
display = Show(contour, view)
display.Representation = 'Surface'
ColorBy(display, ('POINTS', 'RTData'))

ResetCamera(view)
Render(view)
SaveScreenshot('contour.png', view)
