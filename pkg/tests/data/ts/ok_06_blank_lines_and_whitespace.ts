
@problemName Spaces

@univariate true
@classLabel true 1 2 3

@data

 1.5 , 2.5 ,3.5 : 3

4,5,6:1
