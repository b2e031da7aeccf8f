from paraview.simple import *

# Pathline rendering with tubes plus direction glyphs. Longer than one
# chunking window on purpose; the windows overlap in the middle.

lines = OpenDataFile('pathlines.vtp')

calc = Calculator(Input=lines)
calc.Function = '(-velocity_X*sin(coordsX*0.0174533) + velocity_Y*cos(coordsX*0.0174533)) * iHat'
calc.ResultArrayName = 'projected'

tube = Tube(Input=calc, Radius=0.05)
tube.NumberofSides = 12

view = GetActiveViewOrCreate('RenderView')

tube_display = Show(tube, view)
tube_display.Representation = 'Surface'
ColorBy(tube_display, ('POINTS', 'velocity', 'Magnitude'))
tube_display.Specular = 1.0
tube_display.SpecularPower = 100.0
tube_display.Interpolation = 'Gouraud'

lut = GetColorTransferFunction('velocity')
lut.RescaleTransferFunction(0.0, 0.5)

bar = GetScalarBar(lut, view)
bar.Title = 'velocity'
bar.Visibility = 1

glyph = Glyph(Input=calc, GlyphType='Cone')
glyph.ScaleFactor = 0.5
glyph.GlyphType.Resolution = 10
glyph.GlyphType.Radius = 0.15
glyph.GlyphType.Height = 0.5

glyph_display = Show(glyph, view)
glyph_display.Representation = 'Surface'
ColorBy(glyph_display, ('POINTS', 'velocity', 'Magnitude'))

view.CameraPosition = [0.0, 0.0, 30.0]
view.CameraFocalPoint = [0.0, 0.0, 0.0]
view.CameraViewUp = [0.0, 1.0, 0.0]
ResetCamera(view)

camera = GetActiveCamera()
camera.Zoom(1.4)

view.ViewSize = [2294, 1440]
view.Background = [1.0, 1.0, 1.0]

Render(view)
SaveScreenshot('soma-screenshot.png', view, ImageResolution=[2294, 1440])

# A second pass writes a transparent variant for compositing.
view.ViewSize = [1147, 720]
Render(view)
SaveScreenshot(
    'soma-screenshot-small.png',
    view,
    ImageResolution=[1147, 720],
    TransparentBackground=1,
)

print('wrote soma-screenshot.png')
print('wrote soma-screenshot-small.png')
